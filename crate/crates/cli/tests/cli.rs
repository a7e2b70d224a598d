use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
base_seed = 3
n_repeats = 2

[dataset]
source = "mixture"
classes = 2
per_class = 30
test_per_class = 20
dim = 2
separation = 3.0

[model]
kind = "mlp"
hidden = 4

[distill]
algorithm = "dc"
iterations = 15

[eval]
epochs = 30
batch_size = 16
learning_rate = 0.1
"#;

fn config(dir: &Path, name: &str, kind: &str, top: &str, tables: &str) -> std::path::PathBuf {
    let path = dir.join(format!("{name}.toml"));
    std::fs::write(&path, format!("kind = \"{kind}\"\n{top}\n{BASE}\n{tables}")).unwrap();
    path
}

fn ddutil(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddutil"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_twice_gives_identical_payload() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d", "distill", "", "");
    let a = ddutil(&["run", s(&cfg), "--out", s(&dir.path().join("a"))]);
    let b = ddutil(&["run", s(&cfg), "--out", s(&dir.path().join("b"))]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    assert!(dir.path().join("a/record.json").exists());

    let c = ddutil(&["run", s(&cfg), "--seed", "99", "--out", s(&dir.path().join("c"))]);
    assert!(c.status.success());
    let rec = std::fs::read_to_string(dir.path().join("c/record.json")).unwrap();
    assert!(rec.contains("\"base_seed\": 99"), "{rec}");
}

#[test]
fn invalid_config_exits_2_and_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "bad", "distill", "", "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("learning_rate = 0.1", "learning_rate = -0.1");
    std::fs::write(&cfg, text).unwrap();
    let out = ddutil(&["run", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("eval.learning_rate"), "{}", stderr(&out));
}

#[test]
fn compare_policies_rejects_single_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "one", "compare_policies", "", "[[policies]]\nkind = \"random\"\n");
    let out = ddutil(&["compare-policies", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("policies"));
}

#[test]
fn subcommand_checks_config_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d", "distill", "", "");
    let out = ddutil(&["prune-compare", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kind"));
}

#[test]
fn zero_prune_rate_matches_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "p", "prune_compare", "", "[variant]\nprune_rate = 0.0\n");
    let out = ddutil(&["prune-compare", s(&cfg), "--out", s(&dir.path().join("o"))]);
    assert!(out.status.success(), "{}", stderr(&out));
    let payload: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(payload["baseline"], payload["pruned"]);
    assert_eq!(payload["accuracy_difference"], 0.0);
    assert!(dir.path().join("o/arms.csv").exists());
}

#[test]
fn replay_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let gamma = config(
        dir.path(),
        "g",
        "gamma_search",
        "grid = [0.2, 0.5]",
        "[policy]\nkind = \"random\"\nseed = 1\n",
    );
    let strat = config(
        dir.path(),
        "st",
        "stratified",
        "n_layers = 2",
        "[indicator]\nname = \"density\"\nk = 3\n",
    );
    let g_out = dir.path().join("g");
    let st_out = dir.path().join("st");
    assert!(ddutil(&["run", s(&gamma), "--out", s(&g_out)]).status.success());
    assert!(ddutil(&["run", s(&strat), "--out", s(&st_out)]).status.success());
    let g_rec = g_out.join("record.json");
    let st_rec = st_out.join("record.json");

    let rep = ddutil(&["replay", s(&g_rec)]);
    assert!(rep.status.success(), "{}", stderr(&rep));
    assert!(String::from_utf8_lossy(&rep.stdout).contains("identical"));

    let plots = dir.path().join("plots");
    let ok = ddutil(&["plot-data", s(&g_rec), "--out", s(&plots)]);
    assert!(ok.status.success(), "{}", stderr(&ok));
    let csv = std::fs::read_to_string(plots.join("00_gamma_search_curve.csv")).unwrap();
    assert!(csv.starts_with("ratio,mean,std,comparable\n"));

    let mixed = ddutil(&["plot-data", s(&g_rec), s(&st_rec), "--out", s(&plots)]);
    assert_eq!(mixed.status.code(), Some(1));
    assert!(stderr(&mixed).contains("cannot mix"));

    let none = ddutil(&["plot-data"]);
    assert!(!none.status.success());
}

#[test]
fn tampered_record_fails_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d", "distill", "", "");
    let out = dir.path().join("o");
    assert!(ddutil(&["run", s(&cfg), "--out", s(&out)]).status.success());
    let path = out.join("record.json");
    let mut rec: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    rec["payload"]["report"]["mean_accuracy"] = serde_json::json!(0.123);
    std::fs::write(&path, serde_json::to_string(&rec).unwrap()).unwrap();
    let rep = ddutil(&["replay", s(&path)]);
    assert_eq!(rep.status.code(), Some(1));
    assert!(stderr(&rep).contains("differ"));
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ddutil::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
