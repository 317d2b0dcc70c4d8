use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn stancekit(args: &[&str], runs_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stancekit"))
        .args(args)
        .arg("--runs-root")
        .arg(runs_root)
        .env_remove("STANCEKIT_SEARCH_KEY")
        .output()
        .expect("binary runs")
}

fn config() -> String {
    fixtures().join("toy.toml").to_string_lossy().into_owned()
}

#[test]
fn run_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancekit(&["run", "-c", &config(), "--mock-search", "--mock-backend", "--variant", "cot"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("CoT"));
    assert!(stdout.contains("macro"));

    let run = dir.path().join("toy");
    let eval = Command::new(env!("CARGO_BIN_EXE_stancekit"))
        .arg("evaluate")
        .arg("--predictions")
        .arg(run.join("predictions/predictions.jsonl"))
        .arg("--golds")
        .arg(run.join("predictions/golds.jsonl"))
        .output()
        .unwrap();
    assert!(eval.status.success());
    let original = std::fs::read_to_string(run.join("report.json")).unwrap();
    let report: serde_json::Value = serde_json::from_str(&original).unwrap();
    let macro_f1 = report["macro_f1"].as_f64().unwrap();
    assert!(String::from_utf8_lossy(&eval.stdout).contains(&format!("{macro_f1:.4}")));
}

#[test]
fn retrieve_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancekit(&["retrieve", "-c", &config(), "--mock-search"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("unique targets 5, fetched 5"));

    let out = stancekit(&["epoch-sweep", "-c", &config(), "--mock-search", "--epochs", "1,2", "--run-id", "sw"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("sw/sweep.tsv").is_file());
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = stancekit(&["run", "-c", &config()], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("STANCEKIT_SEARCH_KEY"));

    let out = stancekit(&["epoch-sweep", "-c", &config(), "--mock-search", "--epochs", "2,1"], dir.path());
    assert!(!out.status.success());

    let out = stancekit(&["run", "-c", "/nonexistent.toml", "--mock-search"], dir.path());
    assert!(!out.status.success());

    let out = stancekit(&["run", "-c", &config(), "--mock-search", "--backend", "process"], dir.path());
    assert!(!out.status.success());
    assert!(!dir.path().join("toy/predictions").exists());
}
