//! Library pieces wired together the way the harness and scripts use them.

use ddutil::dataset::{gen_gaussian_mixture, load_csv, load_idx, write_csv, write_idx, ClassSpec, LabeledDataset, MixtureSpec};
use ddutil::distill::{DistillConfig, DistillPipeline, DistillPipelineConfig, InitMode};
use ddutil::harness::{self, ExperimentConfig, Payload, RunOptions};
use ddutil::model::{Architecture, TrainConfig};
use ddutil::select::{critical_ratio_search, greedy_select, SelectionPolicy};
use ddutil::utility::{monte_carlo_extend, monte_carlo_indicator, MonteCarloState, SubsetDraw, UtilityScores};

fn mixture(seed: u64) -> LabeledDataset {
    let classes = (0..3)
        .map(|c| {
            let mut m = vec![0.0; 3];
            m[c] = 3.0;
            ClassSpec::new(m, 1.0, 40)
        })
        .collect();
    gen_gaussian_mixture(&MixtureSpec { classes }, seed).unwrap()
}

fn small_pipeline() -> DistillPipelineConfig {
    DistillPipelineConfig {
        distill: DistillConfig::dc(10, Architecture::mlp(4)),
        ipc: 1,
        init: InitMode::Real,
        eval_arch: Architecture::mlp(4),
        eval: TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 0.1,
            momentum: 0.5,
            seed: 0,
            shuffle: true,
        },
    }
}

const CONFIG: &str = r#"
kind = "gamma_search"
base_seed = 12
n_repeats = 2
grid = [0.1, 0.3, 0.9]

[dataset]
source = "json"
train = "train.json"
test = "test.json"

[model]
kind = "mlp"
hidden = 4

[distill]
algorithm = "dc"
iterations = 10

[eval]
epochs = 20
batch_size = 16
learning_rate = 0.1
momentum = 0.5

[policy]
kind = "random"
seed = 4
"#;

#[test]
fn harness_gamma_search_equals_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let (train, test) = (mixture(1), mixture(2));
    train.save_json(dir.path().join("train.json")).unwrap();
    test.save_json(dir.path().join("test.json")).unwrap();
    let cfg_path = dir.path().join("g.toml");
    std::fs::write(&cfg_path, CONFIG).unwrap();

    let opts = RunOptions {
        seed: None,
        out: Some(dir.path().join("out")),
    };
    let (record, _) = harness::run_experiment(&cfg_path, &opts).unwrap();
    let Payload::GammaSearch { result } = record.payload else {
        panic!("wrong payload")
    };

    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let pipe = DistillPipeline::new(cfg.pipeline_config(), &test);
    let direct = critical_ratio_search(&train, &SelectionPolicy::random(4), &pipe, &[0.1, 0.3, 0.9], 2, 12).unwrap();
    assert_eq!(serde_json::to_value(&result).unwrap(), serde_json::to_value(&direct).unwrap());

    let curve = std::fs::read_to_string(dir.path().join("out/curve.csv")).unwrap();
    assert_eq!(curve, direct.curve_csv());
}

#[test]
fn monte_carlo_resumes_from_saved_state() {
    let ds = mixture(3);
    let test = mixture(4);
    let pipe = DistillPipeline::new(small_pipeline(), &test);

    let (_, whole) = monte_carlo_indicator(&ds, 30, 6, &pipe, 8, SubsetDraw::ClassBalanced).unwrap();

    let (_, part) = monte_carlo_indicator(&ds, 30, 2, &pipe, 8, SubsetDraw::ClassBalanced).unwrap();
    let mut resumed = MonteCarloState::from_json(&part.to_json().unwrap()).unwrap();
    monte_carlo_extend(&mut resumed, &ds, &pipe, 4).unwrap();
    assert_eq!(resumed, whole);
}

#[test]
fn saved_scores_drive_the_same_selection() {
    let dir = tempfile::tempdir().unwrap();
    let ds = mixture(5);
    let scores = UtilityScores::from_values("toy", ds.ids().iter().map(|&id| (id, ((id * 7919) % 101) as f64)));
    let path = dir.path().join("scores.json");
    std::fs::write(&path, scores.to_json().unwrap()).unwrap();
    let back = UtilityScores::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    for r in [0.05, 0.25, 0.5] {
        assert_eq!(greedy_select(&ds, &scores, r).unwrap(), greedy_select(&ds, &back, r).unwrap());
    }
}

#[test]
fn file_formats_feed_the_same_dataset() {
    let dir = tempfile::tempdir().unwrap();
    // 8-bit values survive the IDX round trip exactly
    let n = 12;
    let feats: Vec<f64> = (0..n * 4).map(|i| ((i * 37) % 256) as f64 / 255.0).collect();
    let ds = LabeledDataset::new(3, 4, (0..n).collect(), (0..n).map(|i| i % 3).collect(), feats).unwrap();

    let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
    write_idx(&ds, 2, 2, &img, &lab).unwrap();
    let from_idx = load_idx(&img, &lab).unwrap();
    assert_eq!(from_idx.features(), ds.features());
    assert_eq!(from_idx.labels(), ds.labels());

    let csv = dir.path().join("d.csv");
    write_csv(&ds, &csv).unwrap();
    let from_csv = load_csv(&csv, "label").unwrap();
    assert_eq!(from_csv.features(), ds.features());
    assert_eq!(from_csv.labels(), ds.labels());
}
