use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ezfolio(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ezfolio"))
        .args(args)
        .current_dir(dir)
        .env_remove("EZFOLIO_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = ezfolio(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const CONFIG: &str = r#"
[data]
prices = "prices.csv"
splits_dir = "splits"
n_splits = 2
train_ratio_min = 0.6
train_ratio_max = 0.8

[env]
max_frame = 64
episode_length = 30
varcov_window = 20

[agent]
time_horizon = 32
minibatch_size = 16
training_epoch = 2
ce_window = 60

[recursive]
ce_samples = 3

[network]
hid_layers = [8]

[run]
seeds = [1]
out_dir = "runs"
"#;

fn setup(dir: &Path, config: &str) {
    fs::write(dir.join("config.toml"), config).unwrap();
    ok(dir, &["synth", "--out", "prices.csv", "--rows", "300", "--seed", "4"]);
    ok(dir, &["ingest", "--config", "config.toml"]);
}

#[test]
fn pipeline_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    setup(d, CONFIG);
    assert!(d.join("splits/manifest.csv").exists());

    ok(d, &["train", "--config", "config.toml"]);
    let eval = ok(d, &["evaluate", "--config", "config.toml"]);
    assert!(eval.contains("split 1 seed 1"));
    let first = fs::read(d.join("runs/ppo-recursive/metrics.csv")).unwrap();

    ok(d, &["train", "--config", "config.toml", "--out", "again"]);
    ok(d, &["evaluate", "--config", "config.toml", "--out", "again"]);
    assert_eq!(first, fs::read(d.join("again/ppo-recursive/metrics.csv")).unwrap());

    let report = ok(d, &["report", "--out", "runs"]);
    assert!(report.contains("PPO"));
    assert!(d.join("runs/report.txt").exists());
}

#[test]
fn recursive_reinforce_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = CONFIG.replace("[agent]\n", "[agent]\nalgorithm = \"reinforce\"\nobjective = \"recursive\"\n");
    fs::write(d.join("config.toml"), cfg).unwrap();
    let out = ezfolio(d, &["train", "--config", "config.toml"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("only defined for critic-based algorithms"), "{err}");
}

#[test]
fn report_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ezfolio(dir.path(), &["report", "--out", "."]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn report_needs_a_location() {
    let dir = tempfile::tempdir().unwrap();
    let out = ezfolio(dir.path(), &["report"]);
    assert!(!out.status.success());
}

#[test]
fn zero_workers_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.toml"), CONFIG).unwrap();
    let out = ezfolio(dir.path(), &["train", "--config", "config.toml", "--workers", "0"]);
    assert!(!out.status.success());
}
