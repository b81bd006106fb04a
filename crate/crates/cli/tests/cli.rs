use std::fs;
use std::process::{Command, Output};

fn seesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seesim")).args(args).output().unwrap()
}

#[test]
fn constants_writes_reports_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let res = seesim(&["constants", "--out", out.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("constants_values.csv")).unwrap();
    assert!(csv.starts_with("quantity,value\n"));
    assert!(!csv.contains('\r'));
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("constants.json")).unwrap()).unwrap();
    assert_eq!(meta["experiment"], "constants");
}

#[test]
fn mismatched_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"experiment": "barrier"}"#).unwrap();
    let res = seesim(&["apriori", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("barrier"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"pathz": 10}"#).unwrap();
    let res = seesim(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failed_report_sets_exit_code_one() {
    // a tolerance of zero cannot be met by a Monte Carlo residual
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"paths": 16, "modes": 4, "tolerance": 0.0}"#).unwrap();
    let res = seesim(&["isometry", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}
