use std::path::Path;
use std::process::{Command, Output};

fn ubalab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ubalab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("UBALAB_CACHE")
        .output()
        .unwrap()
}

const TINY: &str = r#"{
  "dataset": {"source": "synthetic", "n_users": 300, "n_items": 120, "mean_degree": 8.0},
  "targets": {"n_users": 8},
  "estimator": {"kind": "proxy", "max_budget": 3},
  "total_budget": 12,
  "victims": [{"embedding_dim": 8, "epochs": 8}],
  "correlation": {"n_groups": 20, "model": {"embedding_dim": 8, "epochs": 8}},
  "seeds": [1]
}"#;

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("exp.json"), TINY).unwrap();
    dir
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn run_then_report() {
    let dir = setup();
    let o = ubalab(&["run", "--config", "exp.json", "--out", "a"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(dir.path().join("a/manifest.json").exists());
    assert!(dir.path().join("a/reports/comparison.csv").exists());

    let o = ubalab(&["run", "--config", "exp.json", "--out", "a"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("estimate: 2 artifacts (1 from cache)"));

    let o = ubalab(&["run", "--config", "exp.json", "--out", "b", "--seed", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    let o = ubalab(&["report", "--config", "exp.json", "--out", "a", "--with", "b"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(dir.path().join("a/reports/cross-comparison.csv").exists());
}

#[test]
fn stages_one_by_one_and_correlation_order() {
    let dir = setup();
    for stage in ["prepare", "estimate", "allocate", "attack"] {
        let o = ubalab(&[stage, "--config", "exp.json", "--out", "s"], dir.path());
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", text(&o));
    }
    let o = ubalab(&["correlate", "--config", "exp.json", "--out", "s", "--order", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("order 5: spearman r"));
    assert!(dir.path().join("s/correlate/order-5.json").exists());
    // no defense configured
    let o = ubalab(&["defend", "--config", "exp.json", "--out", "s"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn allocate_without_estimate_is_a_runtime_error() {
    let dir = setup();
    let o = ubalab(&["prepare", "--config", "exp.json", "--out", "x"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let o = ubalab(&["allocate", "--config", "exp.json", "--out", "x", "--cache", "nocache"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("missing artifact"), "{}", text(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = setup();
    assert_eq!(ubalab(&["explode"], dir.path()).status.code(), Some(1));
    assert_eq!(ubalab(&["run", "--bogus"], dir.path()).status.code(), Some(1));
    assert_eq!(ubalab(&[], dir.path()).status.code(), Some(1));
    assert_eq!(ubalab(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn print_defaults_is_a_loadable_config() {
    let dir = setup();
    let o = ubalab(&["prepare", "--print-defaults"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    std::fs::write(dir.path().join("d.json"), &o.stdout).unwrap();
    let cfg = ubalab::orchestrator::ExperimentConfig::load(dir.path().join("d.json")).unwrap();
    assert_eq!(cfg, ubalab::orchestrator::ExperimentConfig::default());
    let o = ubalab(&["run", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cache_env_var_is_honoured() {
    let dir = setup();
    let o = Command::new(env!("CARGO_BIN_EXE_ubalab"))
        .args(["prepare", "--config", "exp.json", "--out", "e"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_ubalab"))
        .args(["estimate", "--config", "exp.json", "--out", "e"])
        .current_dir(dir.path())
        .env("UBALAB_CACHE", "envcache")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", text(&o));
    assert!(std::fs::read_dir(dir.path().join("envcache")).unwrap().count() > 0);
}
