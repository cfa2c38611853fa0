//! End-to-end checks of the binary: exit codes, artifact layout, scenario
//! ingestion from JSON, and run-to-run determinism.

use std::fs;
use std::process::{Command, Output};

use gnemech::equilibrium::zero_profile;
use gnemech::fixtures;

fn gnemech(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnemech"))
        .args(args)
        .env("GNEMECH_THREADS", "2")
        .output()
        .expect("binary runs")
}

#[test]
fn centralized_emits_a_solution_table() {
    let out = gnemech(&["centralized", "--scenario", "tri-sym"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("# solution.csv\n"));
    assert!(stdout.contains("player_id,action\n0,"));
    assert!(stdout.contains("welfare,trust_price,kkt_residual,budget_binding"));
}

#[test]
fn gne_construct_writes_artifacts_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = gnemech(&[
        "gne-construct",
        "--scenario",
        "tri-sym",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    for name in ["players.csv", "summary.csv", "properties.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert!(text.lines().count() >= 2, "{name} is empty");
    }
    let properties = fs::read_to_string(dir.path().join("properties.csv")).unwrap();
    assert!(properties.contains(",passed"));
    assert!(!properties.contains(",failed"));
}

#[test]
fn scenario_json_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let raw = fixtures::tri_sym().raw();
    fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
    let out = gnemech(&["gne-construct", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
}

#[test]
fn invalid_scenario_json_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenario.json");
    let raw = fixtures::asymmetric_raw();
    fs::write(&path, serde_json::to_string(&raw).unwrap()).unwrap();
    let out = gnemech(&["gne-construct", "--scenario", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("not symmetric"), "{stderr}");
}

#[test]
fn unknown_scenario_is_a_usage_error() {
    let out = gnemech(&["centralized", "--scenario", "no-such-scenario"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("run_failure"), "{stderr}");
}

#[test]
fn bad_flags_are_usage_errors() {
    let out = gnemech(&["centralized", "--scenario", "tri-sym", "--tol", "-1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gnemech(&["gne-dynamics", "--scenario", "tri-sym", "--damping", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_rejects_the_zero_profile() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.json");
    let profile = zero_profile(&fixtures::tri_sym());
    fs::write(&path, serde_json::to_string(&profile).unwrap()).unwrap();
    let out = gnemech(&[
        "verify",
        "--scenario",
        "tri-sym",
        "--profile",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1), "{out:?}");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("deviation_found"), "{stderr}");
}

#[test]
fn sweep_is_deterministic() {
    let args = ["sweep", "--scenario", "tri-sym", "--count", "8", "--seed", "11"];
    let first = gnemech(&args);
    let second = gnemech(&args);
    assert_eq!(first.status.code(), Some(0), "{first:?}");
    assert_eq!(first.stdout, second.stdout);
    let stdout = String::from_utf8(first.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2 + 8, "header, banner, and 8 rows");
    assert!(stdout.lines().skip(2).all(|l| l.ends_with(",true")));
}
