//! End-to-end tests against the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_eelab")
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("eelab-cli-test-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(
        &path,
        r#"{
  "seed": 21,
  "model": { "num_layers": 4, "input_dim": 6, "hidden_dim": 10, "num_classes": 2, "policy_hidden_dim": 6 },
  "train": { "init_epochs": 3, "policy_epochs": 2, "task_epochs": 1, "rounds_max": 2, "k_samples": 2 },
  "data": {
    "synthetic": { "num_classes": 2, "n": 200, "feature_dim": 6, "easy_fraction": 0.6,
                   "margin_easy": 4.0, "margin_hard": 1.0, "noise": 0.05 },
    "split": [0.7, 0.15, 0.15]
  },
  "sweep": { "alphas": [0.0, 0.02], "seeds": [21] }
}"#,
    )
    .unwrap();
    path
}

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("EELAB_OUT_ROOT")
        .output()
        .expect("binary runs")
}

fn assert_code(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn pipeline_smoke_gen_train_eval() {
    let dir = workdir("smoke");
    let config = small_config(&dir);
    let c = config.to_str().unwrap();

    assert_code(&run(&["gen-data", "--config", c, "--out", "run"], &dir), 0);
    assert!(dir.join("run/dataset.csv").exists());

    assert_code(&run(&["train", "--config", c, "--out", "run"], &dir), 0);
    assert!(dir.join("run/best.ckpt.json").exists());
    assert!(dir.join("run/train_log.jsonl").exists());
    assert!(dir.join("run/report.json").exists());
    assert!(dir.join("run/round_01.ckpt.json").exists());

    assert_code(&run(&["eval", "--config", c, "--out", "run"], &dir), 0);
    let summary = std::fs::read_to_string(dir.join("run/summary.csv")).unwrap();
    assert!(summary.contains("# config_hash="));
    assert!(summary.contains("# seed=21"));
    assert!(summary.contains("accuracy,mean_exit_layer,saved_layers,n"));
    assert!(dir.join("run/per_instance.csv").exists());
    assert!(dir.join("run/baselines.csv").exists());

    // the training log is one JSON record per line
    let log = std::fs::read_to_string(dir.join("run/train_log.jsonl")).unwrap();
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["event"], "round");
        assert!(v["stage"].is_string());
    }
}

#[test]
fn unknown_config_key_is_exit_code_2_and_named() {
    let dir = workdir("badkey");
    let path = dir.join("bad.json");
    std::fs::write(&path, r#"{"seed": 1, "tyop_key": true}"#).unwrap();
    let out = run(&["train", "--config", path.to_str().unwrap()], &dir);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("tyop_key"), "stderr: {stderr}");
}

#[test]
fn bad_usage_is_exit_code_2() {
    let dir = workdir("usage");
    assert_code(&run(&[], &dir), 2);
    assert_code(&run(&["frobnicate"], &dir), 2);
    assert_code(&run(&["train", "--bogus-flag"], &dir), 2);
    assert_code(&run(&["train", "--seed", "not-a-number"], &dir), 2);
}

#[test]
fn missing_checkpoint_is_data_error() {
    let dir = workdir("nockpt");
    let config = small_config(&dir);
    let out = run(
        &[
            "eval",
            "--config",
            config.to_str().unwrap(),
            "--out",
            "run",
            "--checkpoint",
            "nope.ckpt.json",
        ],
        &dir,
    );
    assert_code(&out, 3);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = workdir("determinism");
    let config = small_config(&dir);
    let c = config.to_str().unwrap();

    for out in ["a", "b"] {
        assert_code(&run(&["gen-data", "--config", c, "--out", out], &dir), 0);
        assert_code(&run(&["train", "--config", c, "--out", out], &dir), 0);
        assert_code(
            &run(
                &["eval", "--config", c, "--out", out, "--checkpoint", &format!("{out}/best.ckpt.json")],
                &dir,
            ),
            0,
        );
    }
    for file in ["dataset.csv", "summary.csv", "per_instance.csv", "baselines.csv"] {
        let a = std::fs::read(dir.join("a").join(file)).unwrap();
        let b = std::fs::read(dir.join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = workdir("seedflag");
    let config = small_config(&dir);
    let c = config.to_str().unwrap();
    assert_code(&run(&["gen-data", "--config", c, "--out", "s21"], &dir), 0);
    assert_code(
        &run(&["gen-data", "--config", c, "--seed", "22", "--out", "s22"], &dir),
        0,
    );
    let a = std::fs::read(dir.join("s21/dataset.csv")).unwrap();
    let b = std::fs::read(dir.join("s22/dataset.csv")).unwrap();
    assert_ne!(a, b);
    let text = String::from_utf8(b).unwrap();
    assert!(text.contains("# seed=22"));
}

#[test]
fn out_root_env_var_supplies_default_directory() {
    let dir = workdir("envroot");
    let config = small_config(&dir);
    let root = dir.join("root-from-env");
    let out = Command::new(bin())
        .args(["gen-data", "--config", config.to_str().unwrap()])
        .current_dir(&dir)
        .env("EELAB_OUT_ROOT", &root)
        .output()
        .expect("binary runs");
    assert_code(&out, 0);
    assert!(root.join("dataset.csv").exists());
}

#[test]
fn gradcheck_passes_and_reports() {
    let dir = workdir("gradcheck");
    let config = small_config(&dir);
    let out = run(
        &["gradcheck", "--config", config.to_str().unwrap(), "--out", "run"],
        &dir,
    );
    assert_code(&out, 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "stdout: {stdout}");
    assert!(dir.join("run/gradcheck.csv").exists());
}

#[test]
fn sweep_writes_flat_table_keyed_by_alpha_and_seed() {
    let dir = workdir("sweep");
    let config = small_config(&dir);
    let out = run(
        &["sweep", "--config", config.to_str().unwrap(), "--out", "run"],
        &dir,
    );
    assert_code(&out, 0);
    let sweep = std::fs::read_to_string(dir.join("run/sweep.csv")).unwrap();
    let data_rows: Vec<&str> = sweep
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("alpha"))
        .collect();
    assert_eq!(data_rows.len(), 2, "2 alphas x 1 seed: {sweep}");
    assert!(dir.join("run/sweep_mean.csv").exists());
}
