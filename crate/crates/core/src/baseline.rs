//! Classical benchmark for position-only datasets: invert the registered
//! image shift through a shift-to-error map fitted on the training split,
//! and score the test split in standardized units.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{mse_metric, read_manifest, read_split, SplitData};
use crate::distortion::{baseline_estimate_from_log, register, AnalysisSettings, ShiftCalibration};
use crate::error::{Error, Result};

pub const ESTIMATOR_NAME: &str = "shift_inversion";
/// MSE of predicting the label mean on standardized labels.
pub const BENCHMARK_MSE: f64 = 1.0;

/// Evaluation summary shared by every estimator scored on a dataset split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub estimator: String,
    pub scenario: u8,
    pub split: String,
    pub n_samples: usize,
    pub components: Vec<String>,
    pub per_component_mse: Vec<f64>,
    pub average_mse: f64,
    pub benchmark_mse: f64,
    /// Samples the estimator could not process; they are scored as a
    /// prediction of the label mean.
    pub failures: usize,
}

/// JSON schema of [`Metrics`].
pub const METRICS_SCHEMA: &str = include_str!("../schemas/metrics.schema.json");

const DISTORTED: usize = 0;
const REFERENCE: usize = 1;

/// Fits the shift-to-error map on every sample of `data`, using the raw
/// horizontal position errors stored alongside.
pub fn calibrate(data: &SplitData, settings: &AnalysisSettings) -> Result<ShiftCalibration> {
    let mut samples = Vec::with_capacity(data.errors.nrows());
    for i in 0..data.errors.nrows() {
        let err = data.raw_error(i)?;
        if let Ok(reg) = register(
            data.channel(i, REFERENCE).view(),
            data.channel(i, DISTORTED).view(),
            settings,
        ) {
            samples.push((err.dp_n.x, err.dp_n.y, reg.at_shift, reg.ct_shift));
        }
    }
    ShiftCalibration::fit(&samples)
}

/// Scores the shift-inversion estimator on the test split of the
/// position-only dataset in `dir`.
pub fn evaluate_baseline(dir: &Path, settings: &AnalysisSettings) -> Result<Metrics> {
    let manifest = read_manifest(dir)?;
    if manifest.scenario != 1 {
        return Err(Error::invalid(
            "dataset",
            format!(
                "the shift-inversion baseline needs a scenario 1 dataset, got scenario {}",
                manifest.scenario
            ),
        ));
    }
    let test = read_split(dir, &manifest, "test")?;
    let n = test.labels.nrows();
    if n == 0 {
        return Err(Error::TooFew {
            what: "test samples",
            needed: 1,
            got: 0,
        });
    }
    let calibration = calibrate(&read_split(dir, &manifest, "train")?, settings)?;
    let stats = manifest.label_stats();

    let mut truth = Array2::zeros((n, 2));
    let mut estimate = Array2::zeros((n, 2));
    let mut failures = 0;
    for i in 0..n {
        let err = test.raw_error(i)?;
        let s_true = stats.standardize(&[err.dp_n.x, err.dp_n.y]);
        truth[[i, 0]] = s_true[0];
        truth[[i, 1]] = s_true[1];
        match baseline_estimate_from_log(
            test.channel(i, REFERENCE).view(),
            test.channel(i, DISTORTED).view(),
            &calibration,
            settings,
        ) {
            Ok((e_at, e_ct)) => {
                let s_hat = stats.standardize(&[e_at, e_ct]);
                estimate[[i, 0]] = s_hat[0];
                estimate[[i, 1]] = s_hat[1];
            }
            Err(Error::NoRegistration { .. }) => failures += 1,
            Err(e) => return Err(e),
        }
    }
    let mse = mse_metric(truth.view(), estimate.view())?;
    Ok(Metrics {
        estimator: ESTIMATOR_NAME.to_string(),
        scenario: manifest.scenario,
        split: "test".to_string(),
        n_samples: n,
        components: manifest.components.clone(),
        per_component_mse: mse.per_component,
        average_mse: mse.average,
        benchmark_mse: BENCHMARK_MSE,
        failures,
    })
}
