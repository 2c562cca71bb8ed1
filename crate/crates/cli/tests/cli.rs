use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic/config.toml")
}

fn flare(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flare"))
        .args(args)
        .arg("--config")
        .arg(config())
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn all_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let o = flare(dir.path(), &["all"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("FLARE"), "{text}");
    for f in ["ledger.json", "report.json", "memory.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    assert!(!dir.path().join(".flare.lock").exists(), "lock released");
}

#[test]
fn predicting_before_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = flare(dir.path(), &["predict"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "MissingUpstreamArtifact");
    assert_eq!(err["stage"], "predict");
}

#[test]
fn a_held_lock_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(".flare.lock"), "12345").unwrap();
    let o = flare(dir.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(4));
    let err: serde_json::Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "Locked");
}

#[test]
fn missing_config_exits_2() {
    let o = Command::new(env!("CARGO_BIN_EXE_flare"))
        .arg("ingest")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_with_one_flag_prints_that_row() {
    let dir = tempfile::tempdir().unwrap();
    assert!(flare(dir.path(), &["all"]).status.success());
    let o = flare(dir.path(), &["ablate", "--no-rl"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("FLARE w/o RL"), "{text}");
    assert!(!text.contains("w/o perception"), "{text}");
}

#[test]
fn cross_eval_prints_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let o = flare(dir.path(), &["cross-eval"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for label in [
        "FLARE",
        "Logistic Regression",
        "Decision Tree",
        "Random Forest",
        "LLM Inference",
    ] {
        assert!(text.contains(label), "{label} missing from\n{text}");
    }
}
