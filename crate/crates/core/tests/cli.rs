use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const ENV_1X3: &str = r#"{"contexts": 1, "actions": 3, "context_probs": [1.0],
  "mean_reward": [[0.2, 0.5, 0.8]], "reward_kind": "bernoulli",
  "policies": {"log": [[0.5, 0.3, 0.2]], "target": [[0.2, 0.3, 0.5]]}}"#;

const ENV_2X3: &str = r#"{"contexts": 2, "actions": 3, "context_probs": [0.4, 0.6],
  "mean_reward": [[0.2, 0.7, 0.5], [0.9, 0.3, 0.1]], "reward_kind": "bernoulli",
  "policies": {"log": [[0.6, 0.3, 0.1], [0.2, 0.2, 0.6]], "target": [[0.1, 0.3, 0.6], [0.5, 0.4, 0.1]]}}"#;

fn mval(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mval"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn entries(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    v.sort();
    v
}

#[test]
fn solve_full_augmentation_is_minvar_policy() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_1X3);
    let out = mval(dir.path(), &["solve", "--env", "env.json", "--alpha", "1", "--out", "pi.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("pi.json"));
    // π ∝ π_t √m with m = r̄ for Bernoulli rewards
    let raw = [0.2 * 0.2f64.sqrt(), 0.3 * 0.5f64.sqrt(), 0.5 * 0.8f64.sqrt()];
    let s: f64 = raw.iter().sum();
    let row = v["policy"][0].as_array().unwrap();
    for (got, r) in row.iter().zip(raw) {
        assert!((got.as_f64().unwrap() - r / s).abs() < 1e-9);
    }
    assert_eq!(v["diagnostics"].as_array().unwrap().len(), 1);
    assert_eq!(entries(dir.path()), vec!["env.json", "pi.json"]);
}

#[test]
fn solve_output_has_sorted_keys_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_2X3);
    for name in ["a.json", "b.json"] {
        let out = mval(dir.path(), &["solve", "--env", "env.json", "--alpha-from-counts", "900", "100", "--out", name]);
        assert!(out.status.success());
    }
    let a = fs::read_to_string(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read_to_string(dir.path().join("b.json")).unwrap());
    let (i_alpha, i_diag, i_pol) = (
        a.find("\"alpha\"").unwrap(),
        a.find("\"diagnostics\"").unwrap(),
        a.find("\"policy\"").unwrap(),
    );
    assert!(i_alpha < i_diag && i_diag < i_pol);

    let out = mval(dir.path(), &["solve", "--env", "env.json", "--alpha", "0.1", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("context_id,action_id,probability"));
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = mval(dir.path(), &["--format", "yaml", "oracle-check"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("UnknownFlag"));

    write(&dir, "env.json", ENV_2X3);
    let out = mval(dir.path(), &["simulate", "--env", "env.json", "--n-log", "5", "--n-aug", "5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("MissingRequired"));

    let out = mval(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_1_with_token() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", &ENV_1X3.replace("[[0.5, 0.3, 0.2]]", "[[0.9, 0.3, -0.2]]"));
    let out = mval(dir.path(), &["solve", "--env", "env.json", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("NegativeEntry:"));

    write(&dir, "env.json", ENV_1X3);
    let out = mval(dir.path(), &["solve", "--env", "env.json", "--alpha", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("ZeroAlpha:"));

    let out = mval(dir.path(), &["solve", "--env", "missing.json", "--alpha", "0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("Io:"));
}

#[test]
fn simulate_then_evaluate_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_2X3);
    let out = mval(
        dir.path(),
        &["simulate", "--env", "env.json", "--n-log", "300", "--n-aug", "100", "--seed", "4", "--data-only", "--out", "data.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("data.csv")).unwrap();
    assert!(csv.starts_with("context_id,action_id,reward,source\n"));
    assert_eq!(csv.lines().count(), 401);

    // the evaluator needs to know which policy produced the aug records
    let solved = mval(dir.path(), &["solve", "--env", "env.json", "--alpha-from-counts", "300", "100"]);
    let pol: Value = serde_json::from_slice(&solved.stdout).unwrap();
    let mut env: Value = serde_json::from_str(ENV_2X3).unwrap();
    env["policies"]["aug"] = pol["policy"].clone();
    write(&dir, "env_aug.json", &env.to_string());

    let out = mval(dir.path(), &["evaluate", "--env", "env_aug.json", "--data", "data.csv", "--out", "est.json"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("est.json"));
    assert_eq!(v["estimate"]["n_used"], 400);
    let est = v["estimate"]["point_estimate"].as_f64().unwrap();
    let sd = v["variance"]["value"].as_f64().unwrap().sqrt();
    // true utility of the target
    let truth = 0.4 * (0.1 * 0.2 + 0.3 * 0.7 + 0.6 * 0.5) + 0.6 * (0.5 * 0.9 + 0.4 * 0.3 + 0.1 * 0.1);
    assert!((est - truth).abs() < 5.0 * sd, "{est} vs {truth}");
}

#[test]
fn simulate_trials_report() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_2X3);
    let args = ["simulate", "--env", "env.json", "--n-log", "30", "--n-aug", "10", "--trials", "200", "--seed", "9", "--strategy", "target"];
    let a = mval(dir.path(), &args);
    let b = mval(dir.path(), &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let v: Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["report"]["estimates"].as_array().unwrap().len(), 200);
    assert_eq!(v["report"]["method"], "target");
}

#[test]
fn sweep_rows_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    write(
        &dir,
        "eta.json",
        r#"{"mode":"eta_sweep","eta_grid":[0.0,4.0],"delta":0.4,"n_log":90,"n_aug":10,"trials":10,"repeats":2,"seed":3,"contexts":8}"#,
    );
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_mval"))
            .current_dir(dir.path())
            .env("MVAL_THREADS", threads)
            .args(["sweep", "--config", "eta.json", "--out", &format!("t{threads}.csv")])
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(fs::read(dir.path().join(format!("t{threads}.csv"))).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "grid_value,strategy,variance,stderr");
    let strategies: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(
        strategies,
        ["mval", "precomputed", "target", "uniform", "mval", "precomputed", "target", "uniform"]
    );

    let out = mval(dir.path(), &["sweep", "--config", "eta.json", "--format", "json", "--out", "t.json"]);
    assert!(out.status.success());
    let rows = json(&dir.path().join("t.json"));
    assert_eq!(rows.as_array().unwrap().len(), 8);

    let bad = mval(dir.path(), &["sweep", "--config", "eta.json"]);
    assert!(bad.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mval"))
        .current_dir(dir.path())
        .env("MVAL_THREADS", "many")
        .args(["sweep", "--config", "eta.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn multi_eval_bound_dominates_members() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_2X3);
    write(
        &dir,
        "class.json",
        "[[[0.1, 0.3, 0.6], [0.5, 0.4, 0.1]], [[0.7, 0.2, 0.1], [0.1, 0.1, 0.8]], [[0.3, 0.3, 0.4], [0.3, 0.4, 0.3]]]",
    );
    let out = mval(dir.path(), &["multi-eval", "--env", "env.json", "--class", "class.json", "--alpha-from-counts", "90", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let bound = v["bound"].as_f64().unwrap();
    let members = v["member_variances"].as_array().unwrap();
    assert_eq!(members.len(), 3);
    assert!(members.iter().all(|m| m.as_f64().unwrap() <= bound + 1e-12));

    write(&dir, "tr.json", r#"{"center": [[0.1, 0.3, 0.6], [0.5, 0.4, 0.1]], "tau": 1.5}"#);
    let out = mval(dir.path(), &["multi-eval", "--env", "env.json", "--class", "tr.json", "--alpha-from-counts", "90", "10"]);
    assert!(out.status.success());
}

#[test]
fn learn_writes_weight_vector() {
    let dir = tempfile::tempdir().unwrap();
    write(&dir, "env.json", ENV_2X3);
    write(
        &dir,
        "ctx.json",
        r#"{"contexts": [
            {"u": [1, 0.5, 0, 0.2, 0.1], "items": [[1, 0, 0, 0, 0], [0, 1, 0, 0, 0], [0, 0, 1, 0, 0]]},
            {"u": [0, 0.3, 1, 0, 0.4], "items": [[0, 0, 0, 1, 0], [0, 0, 0, 0, 1], [1, 1, 0, 0, 0]]}]}"#,
    );
    let out = mval(
        dir.path(),
        &["learn", "--env", "env.json", "--contexts", "ctx.json", "--alpha-from-counts", "90", "10", "--steps", "50", "--out", "w.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&dir.path().join("w.json"));
    assert_eq!(v.as_object().unwrap().len(), 1);
    assert_eq!(v["w"].as_array().unwrap().len(), 25);
}

#[test]
fn oracle_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = mval(dir.path(), &["oracle-check", "--max-contexts", "3", "--max-actions", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["checks"].as_array().unwrap().iter().all(|c| c["failures"] == 0));
    assert!(entries(dir.path()).is_empty());
}
