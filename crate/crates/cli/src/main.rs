use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ddutil::harness::{self, RunOptions, RunRecord};
use ddutil::Error;

#[derive(Parser)]
#[command(name = "ddutil", version, about = "Dataset distillation and data-utility experiments")]
struct Cli {
    /// Override the config's base seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Output directory for records and CSVs. Without it, runs go to
    /// `$DDUTIL_OUT/<name>` (or `runs/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Critical-ratio search for every listed policy over one pipeline.
    ComparePolicies { config: PathBuf },
    /// Gradient matching with and without loss-based batch pruning.
    PruneCompare { config: PathBuf },
    /// Turn gamma-search or stratified records into plot-ready CSVs.
    PlotData {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Re-execute a record and check that its results are reproduced exactly.
    Replay { record: PathBuf },
}

fn report(record: &RunRecord, path: &std::path::Path) {
    println!("{}", serde_json::to_string(&record.payload).unwrap_or_default());
    eprintln!(
        "wrote {} ({:.2}s)",
        path.display(),
        record.wall_clock_seconds
    );
}

fn run(cli: Cli) -> ddutil::Result<bool> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| Error::Argument(format!("--jobs: {e}")))?;
    }
    let opts = RunOptions {
        seed: cli.seed,
        out: cli.out.clone(),
    };
    match cli.command {
        Command::Run { config } => {
            let (rec, path) = harness::run_experiment(&config, &opts)?;
            report(&rec, &path);
        }
        Command::ComparePolicies { config } => {
            let (rec, path) = harness::compare_policies(&config, &opts)?;
            report(&rec, &path);
        }
        Command::PruneCompare { config } => {
            let (rec, path) = harness::prune_compare(&config, &opts)?;
            report(&rec, &path);
        }
        Command::PlotData { records } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("plots"));
            for p in harness::emit_plot_data(&records, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Replay { record } => {
            let outcome = harness::replay(&record)?;
            if !outcome.identical {
                eprintln!("{}: results differ from the recorded payload", record.display());
                return Ok(false);
            }
            println!("{}: identical", record.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Error::Validation { field, message }) => {
            eprintln!("invalid config: {field}: {message}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
