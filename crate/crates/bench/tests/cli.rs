use std::path::Path;
use std::process::{Command, Output};

use srnfilter::convergence::ls_slope;

const MODEL: &str = r#"{
  "species": ["A", "B", "C"],
  "reactions": [
    {"produced": {"A": 1}, "rate": 2.0},
    {"consumed": {"A": 1}, "rate": 0.5},
    {"consumed": {"A": 1}, "produced": {"B": 1}, "rate": 1.0},
    {"consumed": {"B": 1}, "rate": 0.5},
    {"consumed": {"B": 1}, "produced": {"C": 1}, "rate": 1.0},
    {"consumed": {"C": 1}, "rate": 0.5}
  ],
  "initial": {"A": 1},
  "partition": {"interest": ["A"], "observed": ["C"]},
  "bounds": {"A": [0, 16], "B": [0, 16]},
  "horizon": 2.0
}"#;

fn srnfilter(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srnfilter"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("model.json"), MODEL).unwrap();
    dir
}

fn error_code(o: &Output) -> i64 {
    let v: serde_json::Value = serde_json::from_slice(&o.stderr).expect("error is JSON");
    v["code"].as_i64().unwrap()
}

#[test]
fn filter_outputs_are_reproducible() {
    let dir = setup();
    for out in ["a", "b"] {
        let o = srnfilter(&["filter", "--model", "model.json", "--M", "200", "--seed", "7", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["pmf.csv", "summary.csv", "path.json", "path.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between reruns");
    }
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 7"));
}

#[test]
fn simulate_then_observe_gives_the_same_path() {
    let dir = setup();
    let o = srnfilter(&["simulate", "--model", "model.json", "--seed", "3", "--out", "sim"], dir.path());
    assert!(o.status.success());
    let o = srnfilter(
        &["observe", "--model", "model.json", "--trajectory", "sim/trajectory.csv", "--out", "obs"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read(dir.path().join("sim/path.csv")).unwrap();
    let b = std::fs::read(dir.path().join("obs/path.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = setup();
    let o = srnfilter(&["filter", "--model", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_code(&o), 2);
    let o = srnfilter(&["filter", "--model", "model.json", "--method", "kalman"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = srnfilter(&["filter", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = srnfilter(&["convergence", "--model", "model.json", "--qoi", "tail:C>=1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "observed species are not a valid QOI");
}

#[test]
fn config_file_overrides_flags() {
    let dir = setup();
    std::fs::write(dir.path().join("run.json"), r#"{"method": "pf", "M": 50}"#).unwrap();
    let o = srnfilter(
        &["filter", "--model", "model.json", "--method", "cmp", "--config", "run.json", "--out", "o"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["method"], "pf");
}

#[test]
fn dry_run_reports_counts_without_solving() {
    let dir = setup();
    let o = srnfilter(&["filter", "--model", "model.json", "--method", "ffsp", "--dry-run"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["hidden_states"], "289");
    assert_eq!(v["interest_states"], "17");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn reported_slope_matches_a_refit_of_the_table() {
    let dir = setup();
    let o = srnfilter(
        &[
            "convergence", "--model", "model.json", "--qoi", "tail:A>=2", "--M", "50,100,200", "--reps", "4",
            "--methods", "cmp", "--out", "conv",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(dir.path().join("conv/convergence.csv")).unwrap();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in rd.records() {
        let rec = rec.unwrap();
        x.push(rec[1].parse::<f64>().unwrap().ln());
        y.push(rec[3].parse::<f64>().unwrap().ln());
    }
    assert_eq!(x.len(), 3);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let reported = v["slopes"]["cmp"].as_f64().unwrap();
    assert!((reported - ls_slope(&x, &y)).abs() < 1e-9);
}
