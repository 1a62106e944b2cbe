use std::fs;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interval-avoid"))
        .args(args)
        .env("INTERVAL_AVOID_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn tables_default_grid() {
    let out = run(&["tables"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,h_plus,h_minus,h,U_minus,nu1_mass,gamma"));
    let row = text
        .lines()
        .find(|l| l.starts_with("2.0000000000000000e0,"))
        .expect("row at x = 2");
    let cells: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cells[1] - 0.868_143_838_367_911_1).abs() < 1e-15);
    assert!((cells[3] - 0.935_975_380_284_533).abs() < 1e-15);
    // every float carries 17 significant digits
    assert!(row.split(',').all(|c| c.split('e').next().unwrap().replace(['.', '-'], "").len() == 17));
}

#[test]
fn tables_are_byte_identical_and_validate_grid() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = run(&["tables", "--kind", "nu_masses", "--grid", "-1,-2.5,3", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let inside = run(&["tables", "--grid", "0.5"]);
    assert_eq!(inside.status.code(), Some(2));
    let pots = run(&["tables", "--kind", "potentials", "--grid", "0"]);
    assert!(String::from_utf8(pots.stdout).unwrap().contains("0.0000000000000000e0,0.0000000000000000e0"));
}

#[test]
fn simulate_survival_json() {
    let out = run(&["simulate", "--start", "2", "--paths", "2000", "--horizon", "0.5", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["estimator"], "survival");
    let mean = v["mean"].as_f64().unwrap();
    assert!(mean > 0.0 && mean < 1.0);
    assert_eq!(v["n"], 2000);
    assert_eq!(v["config_echo"]["path"]["seed"], 4);
    assert_eq!(v["config_echo"]["path"]["bridge_correction"], true);
    let again = run(&["simulate", "--start", "2", "--paths", "2000", "--horizon", "0.5", "--seed", "4"]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn simulate_dumps_paths() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("p.csv");
    let out = run(&[
        "simulate", "--start", "-1", "--paths", "100", "--horizon", "3", "--no-bridge",
        "--dump-paths", "3", "--dump-out", csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("path_id,t,value,is_jump,killed\n"));
    let ids: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 3);
}

#[test]
fn simulate_rejects_start_inside() {
    let out = run(&["simulate", "--start", "0.5", "--paths", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn condition_json() {
    let out = run(&[
        "condition", "--transform", "updown", "--start", "2", "--horizon", "10",
        "--particles", "300", "--replicates", "4", "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let up = v["p_up"].as_f64().unwrap();
    let down = v["p_down"].as_f64().unwrap();
    assert!((up + down - 1.0).abs() < 1e-12);
    for key in ["stderr_up", "stderr_down", "ess_min", "resamples"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn verify_closedform_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let rep = dir.path().join("rep.json");
    fs::write(&cfg, r#"{"seed": 5}"#).unwrap();
    let out = run(&[
        "verify", "--suite", "closedform", "--config", cfg.to_str().unwrap(), "--out", rep.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(v["suite"], "closedform");
    assert_eq!(v["pass"], true);
    assert_eq!(v["config_echo"]["seed"], 5);
    for check in v["checks"].as_array().unwrap() {
        assert!(!check["anchor"].as_str().unwrap().is_empty());
    }
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "unknown_key": true}"#).unwrap();
    let out = run(&["verify", "--suite", "closedform", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let missing = run(&["verify", "--suite", "closedform", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(missing.status.code(), Some(2));

    let unknown = run(&["verify", "--suite", "nosuch"]);
    assert_eq!(unknown.status.code(), Some(2));

    let conflict = dir.path().join("conflict.json");
    fs::write(&conflict, r#"{"suite": "overshoot"}"#).unwrap();
    let out = run(&["verify", "--suite", "closedform", "--config", conflict.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // a budget too small for the crossing-law comparison fails the suite
    let tiny = dir.path().join("tiny.json");
    fs::write(&tiny, r#"{"suite": "overshoot", "budget_scale": 1e-6}"#).unwrap();
    let out = run(&["verify", "--config", tiny.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stdout_json(&out)["pass"], false);
}

#[test]
fn verify_reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"suite": "clocklimit", "budget_scale": 0.02, "seed": 9}"#).unwrap();
    let strip = |out: &Output| {
        let mut v = stdout_json(out);
        v["runtime_seconds"] = Value::Null;
        v.to_string()
    };
    let a = run(&["verify", "--config", cfg.to_str().unwrap()]);
    let b = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(strip(&a), strip(&b));
}
