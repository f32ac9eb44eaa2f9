use std::path::Path;
use std::process::{Command, Output};

use edgesplit_core::arch::{DeviceFleet, TransformerConfig};
use edgesplit_core::bo::random_search;
use edgesplit_core::evaluator::{AnalyticLatency, Evaluator, SyntheticDegradation};

fn edgesplit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesplit")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = edgesplit(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let record: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON record");
    record["error"].as_str().unwrap().to_string()
}

fn run_small_pipeline(dir: &Path) {
    let d = dir.to_str().unwrap();
    ok(&["profile", "--out", d, "--seed", "4", "--samples", "150"]);
    ok(&["train-predictor", "--out", d, "--seed", "4", "--hidden", "8", "--epochs", "5", "--lr", "1e-2"]);
    ok(&["optimize", "--out", d, "--seed", "4", "--r", "3", "--iters", "2", "--pool", "32"]);
    ok(&["simulate", "--out", d]);
    ok(&["boost", "--out", d, "--seed", "4", "--teacher-epochs", "50", "--epochs", "20", "--agg-epochs", "20"]);
    ok(&["report", "--out", d]);
}

#[test]
fn pipeline_completes_and_reports_every_mode() {
    let dir = tempfile::tempdir().unwrap();
    run_small_pipeline(dir.path());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "edgesplit-report/1");
    assert_eq!(report["modes"].as_array().unwrap().len(), 4);
    assert_eq!(report["evaluations"], 5);
    assert!(report["boost"].is_object());
    let trajectory = std::fs::read_to_string(dir.path().join("report_trajectory.csv")).unwrap();
    assert!(trajectory.starts_with("iteration,psi,best_so_far\n"));
    assert_eq!(trajectory.lines().count(), 6);
}

#[test]
fn zero_iterations_is_random_search() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["optimize", "--out", d, "--seed", "21", "--r", "6", "--iters", "0", "--latency", "analytic"]);
    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("policy.json")).unwrap()).unwrap();

    let base = TransformerConfig::deit_base();
    let fleet = DeviceFleet::example();
    let latency = AnalyticLatency::new(&base, &fleet);
    let oracle = SyntheticDegradation::new(&base);
    let ev = Evaluator {
        base: &base,
        fleet: &fleet,
        latency: &latency,
        oracle: &oracle,
        delta: 0.005,
    };
    let rs = random_search(&ev, 6, 21).unwrap();
    assert_eq!(saved["policy"], serde_json::to_value(&rs.best).unwrap());
    assert_eq!(saved["objective"]["psi"].as_f64().unwrap(), rs.best_value.psi);
}

#[test]
fn seeds_are_mandatory_and_errors_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = edgesplit(&["optimize", "--out", d]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "UsageError");
    assert_eq!(error_kind(&edgesplit(&["optimize", "--out", d, "--seed", "1"])), "MissingArtifact");
    assert_eq!(error_kind(&edgesplit(&["simulate", "--out", d])), "MissingArtifact");
    assert_eq!(error_kind(&edgesplit(&["report", "--out", d])), "MissingArtifact");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[[devices]]\nname = \"x\"\n").unwrap();
    let other = dir.path().join("other");
    let out = edgesplit(&["profile", "--fleet", bad.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "1"]);
    assert_eq!(error_kind(&out), "ConfigError");
}

#[test]
fn tampered_policies_fail_validation_on_reload() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["optimize", "--out", d, "--seed", "2", "--r", "3", "--iters", "1", "--latency", "analytic"]);
    let path = dir.path().join("policy.json");
    let mut policy: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let layers = policy["policy"]["sub_models"][0]["heads"].as_array().unwrap().len();
    policy["policy"]["sub_models"][0]["embed_dim"] = 768.into();
    policy["policy"]["sub_models"][0]["heads"] = serde_json::json!(vec![12; layers]);
    policy["policy"]["sub_models"][0]["mlp_dims"] = serde_json::json!(vec![3072; layers]);
    std::fs::write(&path, serde_json::to_string_pretty(&policy).unwrap()).unwrap();
    let out = edgesplit(&["simulate", "--out", d]);
    assert_eq!(error_kind(&out), "InfeasiblePolicy", "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn report_refuses_mixed_versions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&["optimize", "--out", d, "--seed", "2", "--r", "3", "--iters", "1", "--latency", "analytic"]);
    ok(&["simulate", "--out", d]);
    ok(&["report", "--out", d]);
    let sim = dir.path().join("sim/pipe-edge.json");
    let text = std::fs::read_to_string(&sim).unwrap().replace("edgesplit-sim/1", "edgesplit-sim/0");
    std::fs::write(&sim, text).unwrap();
    assert_eq!(error_kind(&edgesplit(&["report", "--out", d])), "FormatVersion");
}
