use std::fs;
use std::path::Path;

use sarnav::baseline::{evaluate_baseline, Metrics, METRICS_SCHEMA};
use sarnav::config::{LabelOverride, RunConfig};
use sarnav::dataset::{
    build_dataset, directory_digest, make_sample, read_manifest, read_split, standardize_labels, Scenario,
    SPLIT_NAMES,
};
use sarnav::nav::NavError;
use sarnav::Error;

fn small(scenario: u8) -> RunConfig {
    let mut cfg = RunConfig::for_scenario(scenario);
    cfg.geometry.aperture_s = 1.0;
    cfg.geometry.pulse_rate = 100.0;
    cfg.grid.n_at = 32;
    cfg.grid.n_ct = 32;
    cfg.scene.half_extent = 2.5;
    cfg.scene.scatterers = 3;
    cfg.counts.targets = 10;
    cfg.counts.pairs_per_target = 2;
    cfg.scales.at_pos = 0.6;
    cfg.scales.ct_pos = 0.6;
    cfg.seed = 17;
    cfg
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn directory_layout_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(1);
    let manifest = build_dataset(&cfg, dir.path()).unwrap();

    let mut names: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let mut expected = vec!["manifest.json".to_string()];
    for s in SPLIT_NAMES {
        for suffix in ["errors.f64", "inputs.f32", "labels.f32"] {
            expected.push(format!("{s}_{suffix}"));
        }
    }
    expected.sort();
    assert_eq!(names, expected);

    assert_eq!(manifest, read_manifest(dir.path()).unwrap());
    assert_eq!(manifest.format_version, 1);
    assert_eq!(manifest.scenario, 1);
    assert_eq!(manifest.components, vec!["at_pos", "ct_pos"]);
    assert_eq!(manifest.label_source, "dataset");
    let counts: Vec<usize> = manifest.splits.iter().map(|s| s.count).collect();
    assert_eq!(counts, vec![14, 2, 4]);
    for sp in &manifest.splits {
        assert_eq!(sp.inputs_shape, [sp.count, 3, 32, 32]);
        assert_eq!(sp.labels_shape, [sp.count, 2]);
        let bytes = fs::metadata(dir.path().join(&sp.inputs_file)).unwrap().len();
        assert_eq!(bytes as usize, 4 * sp.count * 3 * 32 * 32);
        let bytes = fs::metadata(dir.path().join(&sp.labels_file)).unwrap().len();
        assert_eq!(bytes as usize, 4 * sp.count * 2);
    }

    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    for key in ["format_version", "scenario", "aperture_s", "seed", "label_mean", "label_std", "splits"] {
        assert!(json.get(key).is_some(), "manifest lacks {key}");
    }
}

#[test]
fn stored_tensors_honour_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(1);
    let manifest = build_dataset(&cfg, dir.path()).unwrap();
    let stats = manifest.label_stats();
    let scenario = Scenario::new(1).unwrap();
    let mut errors = Vec::new();
    for name in SPLIT_NAMES {
        let data = read_split(dir.path(), &manifest, name).unwrap();
        for i in 0..data.labels.nrows() {
            for c in 0..3 {
                let (m, s) = mean_std(data.channel(i, c).iter().copied());
                assert!(m.abs() < 1e-3 && (s - 1.0).abs() < 1e-3, "sample {i} channel {c}: {m} {s}");
            }
            let err = data.raw_error(i).unwrap();
            assert_eq!(err.dp_n.z, 0.0);
            let label: Vec<f64> = data.labels.row(i).iter().map(|v| f64::from(*v)).collect();
            let back = stats.destandardize(&label);
            let raw = scenario.label_of(&err);
            for k in 0..2 {
                assert!((back[k] - raw[k]).abs() < 1e-6);
            }
            errors.push(err);
        }
    }
    let (_, recomputed) = standardize_labels(&errors, &scenario).unwrap();
    for k in 0..2 {
        assert!((recomputed.mean[k] - stats.mean[k]).abs() < 1e-12);
        assert!((recomputed.std[k] - stats.std[k]).abs() < 1e-12);
    }
}

#[test]
fn rebuild_is_byte_identical_and_seed_sensitive() {
    let cfg = small(1);
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_dataset(&cfg, a.path()).unwrap();
    rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| build_dataset(&cfg, b.path()))
        .unwrap();
    assert_eq!(directory_digest(a.path()).unwrap(), directory_digest(b.path()).unwrap());
    let mut other = cfg.clone();
    other.seed += 1;
    build_dataset(&other, c.path()).unwrap();
    assert_ne!(directory_digest(a.path()).unwrap(), directory_digest(c.path()).unwrap());
}

#[test]
fn invalid_config_writes_nothing() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("ds");
    let mut cfg = small(1);
    cfg.counts.split = [0.5, 0.5, 0.5];
    let err = build_dataset(&cfg, &out).unwrap_err();
    assert!(err.to_string().contains("counts.split"), "{err}");
    assert!(!out.exists());

    let cfg = small(7);
    assert!(build_dataset(&cfg, &out).unwrap_err().to_string().contains("scenario"));
    assert!(!out.exists());
}

#[test]
fn label_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    cfg.label_override = Some(LabelOverride {
        mean: vec![0.0, 0.0],
        std: vec![2.0, 4.0],
    });
    let manifest = build_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(manifest.label_source, "override");
    assert_eq!(manifest.label_std, vec![2.0, 4.0]);
    let data = read_split(dir.path(), &manifest, "train").unwrap();
    let err = data.raw_error(0).unwrap();
    assert!((f64::from(data.labels[[0, 1]]) - err.dp_n.y / 4.0).abs() < 1e-6);
}

#[test]
fn zero_error_pair_has_zero_difference_channel() {
    let cfg = small(1);
    let render = cfg.render_target(0).unwrap();
    let scenario = Scenario::new(1).unwrap();
    let stats = sarnav::dataset::LabelStats {
        mean: vec![0.0, 0.0],
        std: vec![1.0, 1.0],
    };
    let rec = make_sample(&render, &NavError::zero(), 0, &scenario, &stats).unwrap();
    assert!(rec.input.index_axis(ndarray::Axis(0), 2).iter().all(|&v| v == 0.0));
    assert_eq!(rec.input.index_axis(ndarray::Axis(0), 0), rec.input.index_axis(ndarray::Axis(0), 1));
    assert_eq!(rec.label, vec![0.0, 0.0]);
}

#[test]
fn other_scenarios_have_matching_label_widths() {
    for (scenario, m) in [(4u8, 3usize), (6, 6)] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(scenario);
        cfg.counts.targets = 3;
        cfg.counts.pairs_per_target = 2;
        cfg.scales.at_vel = 0.01;
        cfg.scales.ct_vel = 0.005;
        cfg.scales.d_vel = 0.005;
        let manifest = build_dataset(&cfg, dir.path()).unwrap();
        assert_eq!(manifest.components.len(), m);
        for sp in &manifest.splits {
            assert_eq!(sp.labels_shape, [sp.count, m]);
        }
    }
}

fn check_against_schema(value: &serde_json::Value) {
    let schema: serde_json::Value = serde_json::from_str(METRICS_SCHEMA).unwrap();
    let props = schema["properties"].as_object().unwrap();
    let obj = value.as_object().unwrap();
    for key in schema["required"].as_array().unwrap() {
        assert!(obj.contains_key(key.as_str().unwrap()), "missing {key}");
    }
    for (key, v) in obj {
        let spec = props.get(key).unwrap_or_else(|| panic!("unexpected key {key}"));
        match spec.get("type").and_then(|t| t.as_str()) {
            Some("string") => assert!(v.is_string(), "{key}"),
            Some("integer") => assert!(v.is_u64(), "{key}"),
            Some("number") => assert!(v.is_f64(), "{key}"),
            Some("array") => assert!(v.is_array(), "{key}"),
            _ => {}
        }
        if let Some(c) = spec.get("const") {
            assert_eq!(v, c, "{key}");
        }
    }
}

#[test]
fn baseline_metrics_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(1);
    build_dataset(&cfg, dir.path()).unwrap();
    let metrics = evaluate_baseline(dir.path(), &cfg.analysis).unwrap();
    assert_eq!(metrics.n_samples, 4);
    assert_eq!(metrics.benchmark_mse, 1.0);
    assert!(metrics.average_mse < 1.0, "{metrics:?}");
    let value = serde_json::to_value(&metrics).unwrap();
    check_against_schema(&value);
    let back: Metrics = serde_json::from_value(value).unwrap();
    assert_eq!(back, metrics);
}

#[test]
fn baseline_rejects_other_scenarios_and_empty_test_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(2);
    cfg.counts.targets = 3;
    cfg.counts.pairs_per_target = 2;
    cfg.scales.at_vel = 0.01;
    cfg.scales.ct_vel = 0.005;
    build_dataset(&cfg, dir.path()).unwrap();
    let err = evaluate_baseline(dir.path(), &cfg.analysis).unwrap_err();
    assert!(err.to_string().contains("scenario 1"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(1);
    cfg.counts.split = [0.8, 0.2, 0.0];
    build_dataset(&cfg, dir.path()).unwrap();
    assert!(matches!(
        evaluate_baseline(dir.path(), &cfg.analysis),
        Err(Error::TooFew { .. })
    ));
}

#[test]
fn truncated_tensor_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_dataset(&small(1), dir.path()).unwrap();
    let path = dir.path().join("test_labels.f32");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    let err = read_split(dir.path(), &manifest, "test").unwrap_err();
    assert!(matches!(err, Error::Format(_)), "{err}");
    assert!(err.to_string().contains(&Path::new("test_labels.f32").display().to_string()));
}
