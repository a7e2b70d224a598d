//! Config-driven experiments with persisted, replayable run records.

mod config;
mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::distill::{init_synthetic, Algorithm, DistillPipeline, EvalReport, InitMode};
use crate::error::{Error, Result};
use crate::model::{features, train, Architecture, FeatureMap};
use crate::select::{
    critical_ratio_search, critical_ratio_search_with_baseline, default_grid, full_data_baseline, stratified_eval,
    CriticalRatioResult, SelectionPolicy,
};
use crate::seed;
use crate::stats;
use crate::utility::{
    cluster_distance_indicator, density_indicator, init_distance_indicator, loss_indicator, monte_carlo_indicator,
    UtilityScores,
};

pub use config::{
    DatasetSpec, DistillSpec, ExperimentConfig, ExperimentKind, FeatureSpace, IndicatorName, IndicatorSpec,
    PolicyKindSpec, PolicySpec, PruneVariant,
};
pub use plot::emit_plot_data;

pub const RECORD_FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));
/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "DDUTIL_OUT";
pub const RECORD_FILE: &str = "record.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub indicator: String,
    pub covered: usize,
    pub uncovered: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub metadata: serde_json::Value,
}

impl ScoreSummary {
    fn of(scores: &UtilityScores) -> Self {
        let values: Vec<f64> = scores.scores.values().copied().collect();
        Self {
            indicator: scores.indicator.clone(),
            covered: values.len(),
            uncovered: scores.uncovered.len(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean: stats::mean(&values),
            metadata: scores.metadata.clone(),
        }
    }
}

/// Deterministic outcome of an experiment. Timings live beside it in the
/// record, never inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Distill {
        report: EvalReport,
    },
    Indicator {
        summary: ScoreSummary,
    },
    GammaSearch {
        result: CriticalRatioResult,
    },
    Stratified {
        indicator: String,
        layers: Vec<EvalReport>,
    },
    PruneCompare {
        baseline: EvalReport,
        pruned: EvalReport,
        /// Pruned minus baseline mean accuracy.
        accuracy_difference: f64,
    },
    ComparePolicies {
        results: Vec<CriticalRatioResult>,
    },
}

impl Payload {
    pub fn kind(&self) -> ExperimentKind {
        match self {
            Payload::Distill { .. } => ExperimentKind::Distill,
            Payload::Indicator { .. } => ExperimentKind::Indicator,
            Payload::GammaSearch { .. } => ExperimentKind::GammaSearch,
            Payload::Stratified { .. } => ExperimentKind::Stratified,
            Payload::PruneCompare { .. } => ExperimentKind::PruneCompare,
            Payload::ComparePolicies { .. } => ExperimentKind::ComparePolicies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub started_at: String,
    pub finished_at: String,
    pub wall_clock_seconds: f64,
    /// Named timings, e.g. seconds spent inside distillation per arm.
    pub timing: BTreeMap<String, f64>,
    /// Side files written next to the record.
    pub outputs: Vec<String>,
    pub payload: Payload,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: Self = serde_json::from_str(text)?;
        if rec.version > RECORD_FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported record version {}", rec.version)));
        }
        Ok(rec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Result of [`execute`] before anything is written.
#[derive(Debug, Clone)]
pub struct Execution {
    pub payload: Payload,
    pub timing: BTreeMap<String, f64>,
    /// `(file name, contents)` pairs.
    pub side_outputs: Vec<(String, String)>,
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Directory that receives the record and side files.
    pub out: Option<PathBuf>,
}

fn output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(out) = &opts.out {
        return out.clone();
    }
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(cfg.label())
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))
}

/// Loads, runs and persists one experiment. The record lands in
/// `<out>/record.json`; on failure `<out>/error.txt` holds the message.
pub fn run_experiment(config_path: impl AsRef<Path>, opts: &RunOptions) -> Result<(RunRecord, PathBuf)> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if let Some(s) = opts.seed {
        cfg.base_seed = s;
    }
    run_config(&cfg, opts)
}

pub fn run_config(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<(RunRecord, PathBuf)> {
    cfg.validate()?;
    let dir = output_dir(cfg, opts);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let started_at = chrono::Utc::now().to_rfc3339();
    let clock = Instant::now();
    log::info!("running {} experiment '{}'", cfg.kind.as_str(), cfg.label());
    let exec = match execute(cfg) {
        Ok(e) => e,
        Err(e) => {
            write(&dir, "error.txt", &format!("{e}\n"))?;
            return Err(e);
        }
    };
    let mut outputs = Vec::new();
    for (name, contents) in &exec.side_outputs {
        write(&dir, name, contents)?;
        outputs.push(name.clone());
    }
    let record = RunRecord {
        version: RECORD_FORMAT_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
        timing: exec.timing,
        outputs,
        payload: exec.payload,
    };
    let path = dir.join(RECORD_FILE);
    write(&dir, RECORD_FILE, &record.to_json()?)?;
    Ok((record, path))
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub identical: bool,
    pub original: Payload,
    pub rerun: Payload,
}

/// Re-executes a record from its config snapshot and compares payloads by
/// their serialized form.
pub fn replay(record_path: impl AsRef<Path>) -> Result<ReplayOutcome> {
    let record = RunRecord::load(record_path)?;
    let rerun = execute(&record.config)?.payload;
    let identical = serde_json::to_value(&rerun)? == serde_json::to_value(&record.payload)?;
    Ok(ReplayOutcome {
        identical,
        original: record.payload,
        rerun,
    })
}

/// Runs `cfg` in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<Execution> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.dataset.load()?;
    let ctx = Context {
        cfg,
        train: &train_set,
        test: &test_set,
    };
    match cfg.kind {
        ExperimentKind::Distill => ctx.distill(),
        ExperimentKind::Indicator => ctx.indicator(),
        ExperimentKind::GammaSearch => ctx.gamma_search(),
        ExperimentKind::Stratified => ctx.stratified(),
        ExperimentKind::PruneCompare => ctx.prune_compare(),
        ExperimentKind::ComparePolicies => ctx.compare_policies(),
    }
}

/// Loads and runs a `prune_compare` config.
pub fn prune_compare(config_path: impl AsRef<Path>, opts: &RunOptions) -> Result<(RunRecord, PathBuf)> {
    run_kind(config_path, opts, ExperimentKind::PruneCompare)
}

/// Loads and runs a `compare_policies` config.
pub fn compare_policies(config_path: impl AsRef<Path>, opts: &RunOptions) -> Result<(RunRecord, PathBuf)> {
    run_kind(config_path, opts, ExperimentKind::ComparePolicies)
}

fn run_kind(config_path: impl AsRef<Path>, opts: &RunOptions, kind: ExperimentKind) -> Result<(RunRecord, PathBuf)> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    if cfg.kind != kind {
        return Err(Error::validation(
            "kind",
            format!("expected \"{}\", found \"{}\"", kind.as_str(), cfg.kind.as_str()),
        ));
    }
    if let Some(s) = opts.seed {
        cfg.base_seed = s;
    }
    run_config(&cfg, opts)
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    train: &'a LabeledDataset,
    test: &'a LabeledDataset,
}

fn layers_csv(layers: &[EvalReport]) -> String {
    let mut out = String::from("layer,mean,std\n");
    for (j, rep) in layers.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{}\n",
            j + 1,
            stats::format_g6(rep.mean_accuracy),
            stats::format_g6(rep.std_accuracy)
        ));
    }
    out
}

impl Context<'_> {
    fn pipeline(&self) -> DistillPipeline<'_> {
        DistillPipeline::new(self.cfg.pipeline_config(), self.test)
    }

    fn grid(&self) -> Vec<f64> {
        self.cfg.grid.clone().unwrap_or_else(default_grid)
    }

    fn spec(&self) -> Result<&IndicatorSpec> {
        self.cfg
            .indicator
            .as_ref()
            .ok_or_else(|| Error::validation("indicator", "missing"))
    }

    fn probe_model(&self, spec: &IndicatorSpec) -> Architecture {
        spec.probe_model.unwrap_or(self.cfg.model)
    }

    fn feature_map(&self, spec: &IndicatorSpec) -> Result<(FeatureMap, Option<crate::model::ModelParams>)> {
        match spec.features {
            FeatureSpace::Input => Ok((FeatureMap::from_dataset(self.train), None)),
            FeatureSpace::Probe => {
                let probe = spec
                    .probe
                    .as_ref()
                    .ok_or_else(|| Error::validation("indicator.probe", "required for probe features"))?;
                let cfg = probe.with_seed(seed::derive(self.cfg.base_seed, &[0xFE]));
                let params = train(self.train, self.probe_model(spec), &cfg)?.params;
                Ok((features(&params, self.train)?, Some(params)))
            }
        }
    }

    fn scores(&self) -> Result<UtilityScores> {
        let spec = self.spec()?;
        let base = self.cfg.base_seed;
        match spec.name {
            IndicatorName::Loss => {
                let probe = spec
                    .probe
                    .as_ref()
                    .ok_or_else(|| Error::validation("indicator.probe", "required by the loss indicator"))?;
                loss_indicator(
                    self.train,
                    self.probe_model(spec),
                    probe,
                    spec.n_trials,
                    spec.use_epochs.unwrap_or(probe.epochs),
                    spec.smooth_sigma,
                )
            }
            IndicatorName::Density => {
                let (f, _) = self.feature_map(spec)?;
                density_indicator(&f, self.train, spec.k.unwrap_or(1))
            }
            IndicatorName::ClusterDistance => {
                let (f, _) = self.feature_map(spec)?;
                cluster_distance_indicator(&f, self.train, spec.k_clusters.unwrap_or(1), seed::derive(base, &[0xC1]))
            }
            IndicatorName::InitDistance => {
                let (f, probe) = self.feature_map(spec)?;
                let syn = init_synthetic(self.train, self.cfg.distill.ipc, InitMode::Real, seed::derive(base, &[0]))?;
                let init = (0..syn.num_classes())
                    .map(|c| match &probe {
                        Some(p) => p.embed(syn.class_block(c)),
                        None => Ok(syn.class_block(c).to_vec()),
                    })
                    .collect::<Result<Vec<_>>>()?;
                init_distance_indicator(&f, self.train, &init)
            }
            IndicatorName::MonteCarlo => {
                let m = spec.subset_size.unwrap_or(1);
                let (scores, _) = monte_carlo_indicator(self.train, m, spec.n_trials, &self.pipeline(), base, spec.draw)?;
                Ok(scores)
            }
        }
    }

    fn policy(&self, spec: &PolicySpec, scores: Option<&UtilityScores>) -> Result<SelectionPolicy> {
        match spec.kind {
            PolicyKindSpec::Random => Ok(SelectionPolicy::random(spec.seed)),
            PolicyKindSpec::Greedy => scores
                .cloned()
                .map(SelectionPolicy::greedy)
                .ok_or_else(|| Error::validation("indicator", "greedy selection needs scores")),
        }
    }

    fn distill(&self) -> Result<Execution> {
        let pipe = self.pipeline();
        let base = self.cfg.base_seed;
        let outcomes = (0..self.cfg.n_repeats as u64)
            .into_par_iter()
            .map(|r| pipe.run_timed(self.train, seed::derive(base, &[r])))
            .collect::<Result<Vec<_>>>()?;
        let report = EvalReport::from_trials(outcomes.iter().map(|o| o.accuracy).collect())?;
        let mut timing = BTreeMap::new();
        timing.insert("distill_seconds".into(), outcomes.iter().map(|o| o.distill_seconds).sum());
        Ok(Execution {
            payload: Payload::Distill { report },
            timing,
            side_outputs: Vec::new(),
        })
    }

    fn indicator(&self) -> Result<Execution> {
        let scores = self.scores()?;
        Ok(Execution {
            payload: Payload::Indicator {
                summary: ScoreSummary::of(&scores),
            },
            timing: BTreeMap::new(),
            side_outputs: vec![
                ("scores.csv".into(), scores.to_csv()?),
                ("scores.json".into(), scores.to_json()?),
            ],
        })
    }

    fn gamma_search(&self) -> Result<Execution> {
        let spec = self
            .cfg
            .policy
            .as_ref()
            .ok_or_else(|| Error::validation("policy", "missing"))?;
        let scores = match spec.kind {
            PolicyKindSpec::Greedy => Some(self.scores()?),
            PolicyKindSpec::Random => None,
        };
        let policy = self.policy(spec, scores.as_ref())?;
        let result = critical_ratio_search(
            self.train,
            &policy,
            &self.pipeline(),
            &self.grid(),
            self.cfg.n_repeats,
            self.cfg.base_seed,
        )?;
        Ok(Execution {
            side_outputs: vec![("curve.csv".into(), result.curve_csv())],
            payload: Payload::GammaSearch { result },
            timing: BTreeMap::new(),
        })
    }

    fn stratified(&self) -> Result<Execution> {
        let scores = self.scores()?;
        let layers = stratified_eval(
            self.train,
            &scores,
            self.cfg.n_layers.unwrap_or(1),
            &self.pipeline(),
            self.cfg.n_repeats,
            self.cfg.base_seed,
        )?;
        Ok(Execution {
            side_outputs: vec![("layers.csv".into(), layers_csv(&layers))],
            payload: Payload::Stratified {
                indicator: scores.indicator,
                layers,
            },
            timing: BTreeMap::new(),
        })
    }

    /// Both arms share every seed; repeats run one after another so the
    /// wall-clock numbers are not distorted by each other.
    fn prune_compare(&self) -> Result<Execution> {
        let variant = self
            .cfg
            .variant
            .as_ref()
            .ok_or_else(|| Error::validation("variant", "missing"))?;
        let baseline = self.pipeline();
        let mut pruned_cfg = self.cfg.pipeline_config();
        pruned_cfg.distill.algorithm = Algorithm::DcPruned;
        pruned_cfg.distill.prune_rate = variant.prune_rate;
        if let Some(f) = variant.prune_start_fraction {
            pruned_cfg.distill.prune_start_fraction = f;
        }
        let pruned = DistillPipeline::new(pruned_cfg, self.test);

        let (mut acc_b, mut acc_p) = (Vec::new(), Vec::new());
        let (mut sec_b, mut sec_p) = (0.0, 0.0);
        for r in 0..self.cfg.n_repeats as u64 {
            let s = seed::derive(self.cfg.base_seed, &[r]);
            let b = baseline.run_timed(self.train, s)?;
            let p = pruned.run_timed(self.train, s)?;
            acc_b.push(b.accuracy);
            acc_p.push(p.accuracy);
            sec_b += b.distill_seconds;
            sec_p += p.distill_seconds;
        }
        let baseline = EvalReport::from_trials(acc_b)?;
        let pruned = EvalReport::from_trials(acc_p)?;
        let mut timing = BTreeMap::new();
        timing.insert("baseline_distill_seconds".into(), sec_b);
        timing.insert("pruned_distill_seconds".into(), sec_p);
        timing.insert("distill_seconds_difference".into(), sec_p - sec_b);
        let summary = format!(
            "arm,mean,std,distill_seconds\nbaseline,{},{},{}\npruned,{},{},{}\n",
            stats::format_g6(baseline.mean_accuracy),
            stats::format_g6(baseline.std_accuracy),
            stats::format_g6(sec_b),
            stats::format_g6(pruned.mean_accuracy),
            stats::format_g6(pruned.std_accuracy),
            stats::format_g6(sec_p),
        );
        Ok(Execution {
            payload: Payload::PruneCompare {
                accuracy_difference: pruned.mean_accuracy - baseline.mean_accuracy,
                baseline,
                pruned,
            },
            timing,
            side_outputs: vec![("arms.csv".into(), summary)],
        })
    }

    fn compare_policies(&self) -> Result<Execution> {
        let specs = &self.cfg.policies;
        let scores = if specs.iter().any(|p| p.kind == PolicyKindSpec::Greedy) {
            Some(self.scores()?)
        } else {
            None
        };
        let pipe = self.pipeline();
        let (n, base) = (self.cfg.n_repeats, self.cfg.base_seed);
        let full = full_data_baseline(self.train, &pipe, n, base)?;
        let grid = self.grid();
        let mut results = Vec::with_capacity(specs.len());
        for spec in specs {
            let policy = self.policy(spec, scores.as_ref())?;
            results.push(critical_ratio_search_with_baseline(
                self.train, &policy, &pipe, &grid, n, base, &full,
            )?);
        }

        let mut side = Vec::new();
        let mut table = String::from("policy,gamma,curve_file\n");
        for (i, res) in results.iter().enumerate() {
            let file = format!("curve_{i}_{}.csv", res.policy);
            table.push_str(&format!("{},{},{file}\n", res.policy, stats::format_g6(res.gamma)));
            side.push((file, res.curve_csv()));
        }
        let mut arrows = String::from("policy_a,policy_b,policy_a_gamma,policy_b_gamma\n");
        for res in &results[1..] {
            arrows.push_str(&format!(
                "{},{},{},{}\n",
                results[0].policy,
                res.policy,
                stats::format_g6(results[0].gamma),
                stats::format_g6(res.gamma)
            ));
        }
        side.push(("policies.csv".into(), table));
        side.push(("arrows.csv".into(), arrows));
        Ok(Execution {
            payload: Payload::ComparePolicies { results },
            timing: BTreeMap::new(),
            side_outputs: side,
        })
    }
}
