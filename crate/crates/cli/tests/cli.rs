use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn sarnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sarnav")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn small(scenario: u8) -> Value {
    json!({
        "scenario": scenario,
        "seed": 5,
        "geometry": {"aperture_s": 1.0, "pulse_rate": 100.0},
        "grid": {"n_at": 32, "n_ct": 32},
        "scene": {"scatterers": 3, "half_extent": 2.0},
        "counts": {"targets": 10, "pairs_per_target": 2},
        "scales": {"at_pos": 0.6, "ct_pos": 0.6, "at_vel": 0.01, "ct_vel": 0.005, "d_vel": 0.005}
    })
}

fn point_target() -> Value {
    json!({"scenario": 1, "scene": {"scatterers": 1, "half_extent": 0.0}})
}

fn checksum_line(out: &Output) -> String {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix("checksum ").map(str::to_owned))
        .expect("checksum line")
}

#[test]
fn zero_error_render_reproduces_the_reference() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let out = tmp.path().join("render");
    let run = sarnav(&["render", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    assert_eq!(
        fs::read(out.join("reference.sar")).unwrap(),
        fs::read(out.join("distorted.sar")).unwrap()
    );
    assert_eq!(
        fs::read(out.join("truth_trajectory.bin")).unwrap(),
        fs::read(out.join("estimated_trajectory.bin")).unwrap()
    );
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("measurement.json")).unwrap()).unwrap();
    assert_eq!(summary["measurement"]["classification"], "NONE");
    assert_eq!(summary["measurement"]["sharpness_ratio"], 1.0);
    let csv = fs::read_to_string(out.join("reference_magnitude.csv")).unwrap();
    assert_eq!(csv.lines().count(), 32);
}

#[test]
fn ct_position_error_shifts_the_image() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let out = tmp.path().join("render");
    let run = sarnav(&[
        "render",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--error",
        "ct_pos=1",
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: Value = serde_json::from_str(&stdout(&run)).unwrap();
    let m = &summary["measurement"];
    assert!(m["ct_shift_px"].as_f64().unwrap().abs() > 2.0, "{m}");
    assert!(m["at_shift_px"].as_f64().unwrap().abs() < 0.5, "{m}");
    assert_eq!(m["classification"], "SHIFT_CT");
    assert_eq!(summary["error"][1], 1.0);
}

#[test]
fn malformed_error_flag_is_a_validation_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    for spec in ["ct_pos", "yaw=1", "ct_pos=abc"] {
        let run = sarnav(&["render", "--config", cfg.to_str().unwrap(), "--error", spec]);
        assert_eq!(run.status.code(), Some(1), "{spec}: {}", stderr(&run));
    }
}

#[test]
fn missing_scenario_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let mut value = small(1);
    value.as_object_mut().unwrap().remove("scenario");
    let cfg = write_config(tmp.path(), "cfg.json", &value);
    let out = tmp.path().join("ds");
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("scenario"), "{}", stderr(&run));
    assert!(!out.exists());
}

#[test]
fn unknown_scenario_and_field_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "seven.json", &small(7));
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("scenario"), "{}", stderr(&run));

    let mut value = small(1);
    value["grid"]["n_rows"] = json!(3);
    let cfg = write_config(tmp.path(), "typo.json", &value);
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("n_rows"), "{}", stderr(&run));
}

#[test]
fn unreadable_config_is_a_validation_failure() {
    let run = sarnav(&["build", "--config", "/nonexistent/sarnav.json"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("/nonexistent/sarnav.json"), "{}", stderr(&run));
}

#[test]
fn unwritable_output_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let out = blocker.join("ds");
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2), "{}", stderr(&run));
}

#[test]
fn unknown_axis_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let run = sarnav(&["sweep", "--config", cfg.to_str().unwrap(), "--axis", "yaw"]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("ct_pos"), "{}", stderr(&run));
}

#[test]
fn sweeps_match_the_expected_effects() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "point.json", &point_target());
    for axis in ["ct_pos", "at_vel", "d_att"] {
        let csv = tmp.path().join(format!("{axis}.csv"));
        let run = sarnav(&[
            "sweep",
            "--config",
            cfg.to_str().unwrap(),
            "--axis",
            axis,
            "--out",
            csv.to_str().unwrap(),
            "--assert",
        ]);
        assert!(run.status.success(), "{axis}: {}", stderr(&run));
        let text = fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 6, "{text}");
    }
}

#[test]
fn sweep_assertion_failure_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "point.json", &point_target());
    // Velocity this large drives the scene far off the grid.
    let run = sarnav(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "ct_vel",
        "--magnitudes",
        "-0.5,0.5",
        "--assert",
    ]);
    assert_eq!(run.status.code(), Some(1), "{}", stderr(&run));
}

#[test]
fn build_is_reproducible_across_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let mut sums = Vec::new();
    for (name, workers) in [("a", "1"), ("b", "3")] {
        let out = tmp.path().join(name);
        let run = sarnav(&[
            "--workers",
            workers,
            "build",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--checksum",
        ]);
        assert!(run.status.success(), "{}", stderr(&run));
        sums.push(checksum_line(&run));
    }
    assert_eq!(sums[0], sums[1]);

    let out = tmp.path().join("c");
    let run = sarnav(&[
        "build",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "6",
        "--out",
        out.to_str().unwrap(),
        "--checksum",
    ]);
    assert!(run.status.success());
    assert_ne!(checksum_line(&run), sums[0]);
}

#[test]
fn zero_workers_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let run = sarnav(&["--workers", "0", "build", "--config", cfg.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
}

#[test]
fn baseline_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cfg.json", &small(1));
    let ds = tmp.path().join("ds");
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", ds.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let summary: Value = serde_json::from_str(&stdout(&run)).unwrap();
    assert_eq!(summary["splits"]["test"]["samples"], 4);

    let metrics_path = tmp.path().join("metrics.json");
    let run = sarnav(&[
        "baseline",
        "--dataset",
        ds.to_str().unwrap(),
        "--out",
        metrics_path.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{}", stderr(&run));
    let printed: Value = serde_json::from_str(&stdout(&run)).unwrap();
    let saved: Value = serde_json::from_str(&fs::read_to_string(&metrics_path).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(saved["estimator"], "shift_inversion");
    assert_eq!(saved["benchmark_mse"], 1.0);
    assert_eq!(saved["components"], json!(["at_pos", "ct_pos"]));
    assert!(saved["average_mse"].as_f64().unwrap() < 1.0, "{saved}");
}

#[test]
fn baseline_rejects_other_scenarios() {
    let tmp = tempfile::tempdir().unwrap();
    let mut value = small(2);
    value["counts"] = json!({"targets": 3, "pairs_per_target": 2});
    let cfg = write_config(tmp.path(), "cfg.json", &value);
    let ds = tmp.path().join("ds");
    let run = sarnav(&["build", "--config", cfg.to_str().unwrap(), "--out", ds.to_str().unwrap()]);
    assert!(run.status.success(), "{}", stderr(&run));
    let run = sarnav(&["baseline", "--dataset", ds.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(stderr(&run).contains("scenario 1"), "{}", stderr(&run));
}
