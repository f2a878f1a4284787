use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rayserde(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rayserde"))
        .args(args)
        .current_dir(dir)
        .env("RAYSERDE_LOG", "error")
        .output()
        .expect("binary runs")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn build_template_writes_full_arrays() {
    let dir = tempfile::tempdir().unwrap();
    let out = rayserde(dir.path(), &["build-template", "--dims", "11,256,256", "--dtheta", "60", "-o", "t.rayt"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cells = 720_896u64;
    let len = fs::metadata(dir.path().join("t.rayt")).unwrap().len();
    assert_eq!(len, 44 + cells * (2 + 8) + 4);
    let report = json(dir.path().join("t.rayt.json"));
    assert_eq!(report["schema_version"], 1);
    assert_eq!(report["result"]["cells"], cells);
    assert_eq!(report["result"]["sectors"], 6);
    assert_eq!(report["config"]["grid"]["dims"], serde_json::json!([11, 256, 256]));
}

#[test]
fn roundtrip_check_passes_on_a_simulated_cloud() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(rayserde(d, &["build-template", "--dims", "11,256,256", "-o", "t.rayt"]).status.code(), Some(0));
    assert_eq!(rayserde(d, &["simulate", "--seed", "4", "-o", "sim"]).status.code(), Some(0));
    let out = rayserde(
        d,
        &["roundtrip-check", "--cloud", "sim/scan.bin", "--template", "t.rayt", "--strategy", "ray,hilbert,morton,axis", "-o", "rt"],
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(d.join("rt/roundtrip-check.json"));
    let checks = report["result"].as_array().unwrap();
    assert_eq!(checks.len(), 4);
    assert!(checks.iter().all(|c| c["identical"] == true));
}

#[test]
fn ssm_check_reports_small_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rayserde(dir.path(), &["ssm-check", "--seed", "7", "-o", "ssm"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(dir.path().join("ssm/ssm-check.json"));
    for key in ["worst_param", "analytic", "numeric", "rel_err"] {
        assert!(!r["result"][key].is_null(), "missing {key}");
    }
    assert!(r["result"]["rel_err"].as_f64().unwrap() <= 1e-4);
    assert_eq!(r["config"]["seed"], 7);
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = rayserde(dir.path(), &["serialize", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = rayserde(dir.path(), &["build-template", "--dtheta", "7", "-o", "t.rayt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("delta_theta"));

    let out = rayserde(dir.path(), &["serialize", "--cloud", "absent.bin"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("inputs.cloud"));

    assert_eq!(rayserde(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn malformed_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.bin"), b"12345").unwrap();
    let out = rayserde(dir.path(), &["roundtrip-check", "--cloud", "bad.bin", "-o", "rt"]);
    assert_eq!(out.status.code(), Some(1));

    fs::write(dir.path().join("bad.rayt"), b"RAYT but not really").unwrap();
    let out = rayserde(dir.path(), &["serialize", "--template", "bad.rayt", "-o", "s"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("run.toml"), "seed = 5\n\n[metrics]\nk = 100\n\n[suite]\nscenes = 1\n").unwrap();
    let out = rayserde(d, &["metrics", "--config", "run.toml", "--seed", "9", "-o", "m"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(d.join("m/metrics.json"));
    assert_eq!(r["config"]["seed"], 9);
    assert_eq!(r["config"]["metrics"]["k"], 100);
    assert_eq!(r["config"]["suite"]["scenes"], 1);

    fs::write(d.join("typo.toml"), "[grid]\ndimz = [1, 2, 3]\n").unwrap();
    let out = rayserde(d, &["metrics", "--config", "typo.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimz"));
}

#[test]
fn metrics_are_worker_count_independent() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (w, o) in [("1", "w1"), ("3", "w3")] {
        let out = rayserde(d, &["metrics", "--scenes", "2", "--workers", w, "--strategy", "ray,hilbert,morton", "-o", o]);
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(d.join("w1/metrics.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("w3/metrics.csv")).unwrap());
    assert!(a.starts_with(b"scene,strategy,ref_row,range_m,K,dispersion_m,angular_spread_deg,same_sector_frac\n"));
}

#[test]
fn empty_scene_set_is_fine() {
    let dir = tempfile::tempdir().unwrap();
    let out = rayserde(dir.path(), &["metrics", "--scenes", "0", "-o", "m"]);
    assert_eq!(out.status.code(), Some(0));
    let r = json(dir.path().join("m/metrics.json"));
    assert!(r["result"]["reports"].as_array().unwrap().is_empty());
}

#[test]
fn sector_forward_and_bench_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = rayserde(d, &["sector-forward", "--seed", "1", "--precision", "f32", "-o", "f"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(d.join("f/sector-forward.json"));
    assert_eq!(r["config"]["precision"], "f32");
    assert!(r["result"]["scans"].as_u64().unwrap() >= 1);

    let out = rayserde(d, &["bench", "--sizes", "2000,5000", "--runs", "1", "-o", "b"]);
    assert_eq!(out.status.code(), Some(0));
    let rows = json(d.join("b/bench.json"))["result"].as_array().unwrap().clone();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["lookup_sort_s"].is_number() && r["scan_s"].is_number()));
}
