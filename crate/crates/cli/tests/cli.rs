//! End-to-end runs of the `efgeo` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn efgeo(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_efgeo"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["verify-identity", "--config", "/nonexistent/efgeo.json"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"eta": 0.1, "etaa": 2}"#).unwrap();
    let o = efgeo(&["emit-figure", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("etaa"));
}

#[test]
fn identity_passes_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["verify-identity", "--n", "2048", "--samples", "21"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["winner"], "B");
    assert!(report["passed"].as_bool().unwrap());
    let series = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 22);
    let manifest = json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["config"]["n"], 2048);
    assert_eq!(manifest["command"], "verify-identity");
}

#[test]
fn mutated_identity_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["verify-identity", "--n", "2048", "--samples", "21", "--mutation", "t2,t4"], dir.path());
    assert_eq!(code(&o), 1);
}

#[test]
fn config_file_and_flags_merge() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"t_end": 4.0, "samples": 11, "n": 1024}"#).unwrap();
    let o = efgeo(&["emit-figure", "--config", cfg.to_str().unwrap(), "--samples", "5"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("figure.csv")).unwrap();
    let last: Vec<f64> = csv.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(last[0], 4.0);
}

#[test]
fn figure_has_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["emit-figure", "--n", "2048"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("figure.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("t,xbar,sigma,T_geo"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|s| s.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201);
    assert_eq!(rows[0][1], 0.0);
    assert!(rows.iter().all(|r| r[3] > 0.0));
}

#[test]
fn tensor_suite_defaults_pass() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["verify-tensors", "--refinements", "2"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["recipes"].as_array().unwrap().len(), 4);
}

#[test]
fn pure_gauge_recipe_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(&["verify-tensors", "--recipes", "pure-gauge", "--refinements", "1"], dir.path());
    assert_eq!(code(&o), 0);
    let report = json(&dir.path().join("report.json"));
    let ids = &report["recipes"][0]["study"]["identities"];
    assert!(ids["cb_identity"]["max"].as_array().unwrap().iter().all(|v| v.as_f64().unwrap() <= 1e-12));
}

#[test]
fn coarse_tensor_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&efgeo(&["verify-tensors", "--points", "8"], dir.path())), 2);
    assert_eq!(code(&efgeo(&["verify-tensors", "--recipes", "bumpy"], dir.path())), 2);
}

#[test]
fn propagation_guards_and_zero_horizon() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&efgeo(&["propagate", "--dt", "1"], dir.path())), 1);
    let o = efgeo(&["propagate", "--t_end", "0", "--n", "1024"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&dir.path().join("report.json"));
    assert_eq!(report["steps"], 0);
    assert_eq!(report["final_l2_error"], 0.0);
}

#[test]
fn short_propagation_with_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let o = efgeo(
        &["propagate", "--n", "1024", "--t_end", "0.2", "--dt", "1e-3", "--samples", "2", "--snapshots", "true"],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let snaps = fs::read_to_string(dir.path().join("snapshots.csv")).unwrap();
    // header plus one row per grid point per record
    assert_eq!(snaps.lines().count(), 1 + 1024 * 3);
    let series = fs::read_to_string(dir.path().join("series.csv")).unwrap();
    assert_eq!(series.lines().count(), 4);
}
