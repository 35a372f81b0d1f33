use std::path::Path;
use std::process::{Command, Output};

fn mpft(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpft"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MPFT_RUN_DIR")
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_then_rerun_from_run_json() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = mpft(
        &["synth", "--seed", "7", "--data.synth.train_count", "8", "--data.synth.test_count_per_subset=4", "--out", "a"],
        d,
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(printed["command"], "synth");

    let run = json(&d.join("a/run.json"));
    assert_eq!(run["command"], "synth");
    assert_eq!(run["train"]["seed"], 7);
    assert_eq!(run["data"]["synth"]["train_count"], 8);

    let out = mpft(&["synth", "--config", "a/run.json", "--out", "b"], d);
    assert!(out.status.success());
    assert_eq!(json(&d.join("a/outputs.json")), json(&d.join("b/outputs.json")));
}

#[test]
fn unknown_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpft(&["synth", "--train.nonsense", "1", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let rec = json(&dir.path().join("x/error.json"));
    assert_eq!(rec["exit_code"], 2);
    assert!(rec["message"].as_str().unwrap().contains("train.nonsense"));
}

#[test]
fn missing_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpft(&["eval", "--model.checkpoint", "nope.safetensors", "--out", "x"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("x/error.json").exists());
}

#[test]
fn unknown_command_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = mpft(&["explode"], dir.path());
    assert!(!out.status.success());
}
