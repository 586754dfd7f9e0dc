//! Training-set generation: error sampling per scenario, image
//! preprocessing, label standardization, target-wise splits and the
//! on-disk dataset directory.
//!
//! A dataset directory holds `manifest.json` plus, for each split,
//! `{split}_inputs.f32` (N×3×H×W), `{split}_labels.f32` (N×m) and
//! `{split}_errors.f64` (N×9 raw errors). All tensors are row-major
//! little-endian.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{derive_seed, stream, RunConfig};
use crate::distortion::LOG_FLOOR;
use crate::error::{Error, Result};
use crate::nav::{ErrorAxis, NavError};
use crate::sar::{SarImage, SceneRender};

pub const FORMAT_VERSION: u32 = 1;
pub const CHANNELS: usize = 3;
/// Smallest standard deviation used when re-standardizing the difference
/// channel, which is legitimately constant for an error-free pair.
pub const DIFFERENCE_MIN_STD: f64 = 1e-6;
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Set of active error components studied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    id: u8,
    active: &'static [ErrorAxis],
}

impl Scenario {
    pub const COUNT: u8 = 6;

    pub fn new(id: u8) -> Result<Self> {
        use ErrorAxis::*;
        let active: &'static [ErrorAxis] = match id {
            1 => &[AtPos, CtPos],
            2 => &[AtVel, CtVel],
            3 => &[AtPos, CtPos, AtVel, CtVel],
            4 => &[AtPos, CtPos, DPos],
            5 => &[AtVel, CtVel, DVel],
            6 => &[AtPos, CtPos, DPos, AtVel, CtVel, DVel],
            _ => {
                return Err(Error::invalid(
                    "scenario",
                    format!("must be between 1 and {}, got {id}", Self::COUNT),
                ))
            }
        };
        Ok(Scenario { id, active })
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    /// Active components in label order.
    pub fn active_errors(&self) -> &'static [ErrorAxis] {
        self.active
    }

    /// Label width.
    pub fn m(&self) -> usize {
        self.active.len()
    }

    pub fn component_names(&self) -> Vec<String> {
        self.active.iter().map(|a| a.name().to_string()).collect()
    }

    /// Active components of `err`, in label order.
    pub fn label_of(&self, err: &NavError) -> Vec<f64> {
        self.active.iter().map(|&a| err.get(a)).collect()
    }
}

/// Standard deviations of the sampled errors, m and m/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorScales {
    pub at_pos: f64,
    pub ct_pos: f64,
    pub d_pos: f64,
    pub at_vel: f64,
    pub ct_vel: f64,
    pub d_vel: f64,
}

impl Default for ErrorScales {
    fn default() -> Self {
        ErrorScales {
            at_pos: 1.5,
            ct_pos: 1.5,
            d_pos: 1.5,
            at_vel: 0.2,
            ct_vel: 0.2,
            d_vel: 0.2,
        }
    }
}

impl ErrorScales {
    /// Scale for a position or velocity axis; attitude axes are never
    /// sampled and report zero.
    pub fn get(&self, axis: ErrorAxis) -> f64 {
        match axis {
            ErrorAxis::AtPos => self.at_pos,
            ErrorAxis::CtPos => self.ct_pos,
            ErrorAxis::DPos => self.d_pos,
            ErrorAxis::AtVel => self.at_vel,
            ErrorAxis::CtVel => self.ct_vel,
            ErrorAxis::DVel => self.d_vel,
            _ => 0.0,
        }
    }

    pub fn validate(&self, scenario: &Scenario) -> Result<()> {
        for axis in &ErrorAxis::ALL[..6] {
            let v = self.get(*axis);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    format!("scales.{}", axis.name()),
                    "must be finite and non-negative",
                ));
            }
        }
        for axis in scenario.active_errors() {
            if !(self.get(*axis) > 0.0) {
                return Err(Error::invalid(
                    format!("scales.{}", axis.name()),
                    format!("must be positive for scenario {}", scenario.id()),
                ));
            }
        }
        Ok(())
    }
}

/// Draws independent zero-mean Gaussian errors on the active components;
/// every other component is exactly zero.
pub fn sample_errors(scenario: &Scenario, seed: u64, scales: &ErrorScales) -> Result<NavError> {
    scales.validate(scenario)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = [0.0; 9];
    for &axis in scenario.active_errors() {
        let normal = Normal::new(0.0, scales.get(axis))
            .map_err(|e| Error::invalid(format!("scales.{}", axis.name()), e.to_string()))?;
        v[axis.index()] = normal.sample(&mut rng);
    }
    NavError::from_array(v)
}

/// Population mean and standard deviation.
fn moments<'a>(values: impl Iterator<Item = &'a f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `log10(pixel + floor)`, standardized to zero mean and unit population
/// standard deviation over the image.
pub fn preprocess_image(magnitude: ArrayView2<f64>, floor: f64) -> Result<Array2<f64>> {
    if magnitude.iter().any(|&m| !(m + floor > 0.0) || !m.is_finite()) {
        return Err(Error::invalid(
            "image",
            "pixels must be finite and positive after the floor offset",
        ));
    }
    let logs = magnitude.mapv(|m| (m + floor).log10());
    let (mean, std) = moments(logs.iter());
    if !(std > 0.0) {
        return Err(Error::DegenerateImage);
    }
    Ok(logs.mapv(|l| (l - mean) / std))
}

/// Preprocessed distorted minus preprocessed reference, re-standardized
/// with the standard deviation floored at [`DIFFERENCE_MIN_STD`].
pub fn difference_channel(distorted: ArrayView2<f64>, reference: ArrayView2<f64>) -> Array2<f64> {
    let diff = &distorted - &reference;
    let (mean, std) = moments(diff.iter());
    let std = std.max(DIFFERENCE_MIN_STD);
    diff.mapv(|d| (d - mean) / std)
}

/// Three-channel network input: distorted, reference, difference.
pub fn build_input(reference: &SarImage, distorted: &SarImage) -> Result<Array3<f32>> {
    if reference.grid() != distorted.grid() {
        return Err(Error::DimensionMismatch("images are on different grids".into()));
    }
    let zr = preprocess_image(reference.magnitude().view(), LOG_FLOOR)?;
    let zd = preprocess_image(distorted.magnitude().view(), LOG_FLOOR)?;
    let zx = difference_channel(zd.view(), zr.view());
    let (rows, cols) = zr.dim();
    let mut out = Array3::<f32>::zeros((CHANNELS, rows, cols));
    for (c, z) in [zd, zr, zx].iter().enumerate() {
        out.index_axis_mut(Axis(0), c).assign(&z.mapv(|v| v as f32));
    }
    Ok(out)
}

/// Per-component label standardization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LabelStats {
    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(y, (m, s))| (y - m) / s)
            .collect()
    }

    pub fn destandardize(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, sd))| v * sd + m)
            .collect()
    }
}

/// Standardizes the active components of `errors` with statistics of the
/// whole set (population standard deviation). Returns the N×m labels.
pub fn standardize_labels(errors: &[NavError], scenario: &Scenario) -> Result<(Array2<f64>, LabelStats)> {
    if errors.len() < 2 {
        return Err(Error::TooFew {
            what: "samples",
            needed: 2,
            got: errors.len(),
        });
    }
    let raw = raw_labels(errors, scenario);
    let mut stats = LabelStats {
        mean: Vec::new(),
        std: Vec::new(),
    };
    for (k, col) in raw.columns().into_iter().enumerate() {
        let (mean, std) = moments(col.iter());
        if !(std > 0.0) {
            return Err(Error::ZeroVariance { component: k });
        }
        stats.mean.push(mean);
        stats.std.push(std);
    }
    Ok((apply_label_stats(&raw, &stats), stats))
}

pub fn raw_labels(errors: &[NavError], scenario: &Scenario) -> Array2<f64> {
    let m = scenario.m();
    let mut raw = Array2::zeros((errors.len(), m));
    for (i, e) in errors.iter().enumerate() {
        for (k, v) in scenario.label_of(e).into_iter().enumerate() {
            raw[[i, k]] = v;
        }
    }
    raw
}

pub fn apply_label_stats(raw: &Array2<f64>, stats: &LabelStats) -> Array2<f64> {
    let mut out = raw.clone();
    for (k, mut col) in out.columns_mut().into_iter().enumerate() {
        col.mapv_inplace(|y| (y - stats.mean[k]) / stats.std[k]);
    }
    out
}

/// Target ids assigned to each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl TargetSplit {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }
}

/// Split sizes for `n` targets: train and validation are rounded from
/// their fractions, test takes the rest.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if n < 3 {
        return Err(Error::TooFew {
            what: "targets",
            needed: 3,
            got: n,
        });
    }
    if ratios.iter().any(|r| !(*r >= 0.0)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("counts.split", "fractions must be non-negative and sum to 1"));
    }
    let train = ((n as f64 * ratios[0]).round() as usize).min(n);
    let val = ((n as f64 * ratios[1]).round() as usize).min(n - train);
    Ok([train, val, n - train - val])
}

/// Shuffles `target_ids` with `seed` and cuts it into train, validation and
/// test sets. Each set is returned in ascending order.
pub fn split_by_target(target_ids: &[usize], ratios: [f64; 3], seed: u64) -> Result<TargetSplit> {
    let mut ids = target_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != target_ids.len() {
        return Err(Error::invalid("target_ids", "contains duplicates"));
    }
    let [n_train, n_val, _] = split_sizes(ids.len(), ratios)?;
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let sorted = |part: &[usize]| {
        let mut v = part.to_vec();
        v.sort_unstable();
        v
    };
    Ok(TargetSplit {
        train: sorted(&ids[..n_train]),
        val: sorted(&ids[n_train..n_train + n_val]),
        test: sorted(&ids[n_train + n_val..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub per_component: Vec<f64>,
    pub average: f64,
}

/// `(1/(m n)) ΣΣ (s − ŝ)²` together with the per-component means.
pub fn mse_metric(s_true: ArrayView2<f64>, s_hat: ArrayView2<f64>) -> Result<MseReport> {
    if s_true.dim() != s_hat.dim() {
        return Err(Error::DimensionMismatch(format!(
            "labels {:?} vs predictions {:?}",
            s_true.dim(),
            s_hat.dim()
        )));
    }
    let (n, m) = s_true.dim();
    if n == 0 || m == 0 {
        return Err(Error::TooFew {
            what: "label entries",
            needed: 1,
            got: 0,
        });
    }
    let per_component: Vec<f64> = (0..m)
        .map(|k| {
            s_true
                .column(k)
                .iter()
                .zip(s_hat.column(k))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let average = per_component.iter().sum::<f64>() / m as f64;
    Ok(MseReport {
        per_component,
        average,
    })
}

/// One input/label pair.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub input: Array3<f32>,
    pub label: Vec<f64>,
    pub target_id: usize,
    pub raw_error: NavError,
}

/// Forms the distorted image for `err` and assembles the sample.
pub fn make_sample(
    render: &SceneRender,
    err: &NavError,
    target_id: usize,
    scenario: &Scenario,
    stats: &LabelStats,
) -> Result<SampleRecord> {
    let distorted = render.distorted(err)?;
    Ok(SampleRecord {
        input: build_input(render.reference(), &distorted)?,
        label: stats.standardize(&scenario.label_of(err)),
        target_id,
        raw_error: *err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub count: usize,
    pub target_ids: Vec<usize>,
    pub inputs_file: String,
    pub inputs_shape: [usize; 4],
    pub labels_file: String,
    pub labels_shape: [usize; 2],
    pub errors_file: String,
    pub errors_shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: u8,
    pub aperture_s: f64,
    pub seed: u64,
    pub components: Vec<String>,
    pub label_mean: Vec<f64>,
    pub label_std: Vec<f64>,
    /// `"dataset"` when the label constants were estimated from all
    /// samples, `"override"` when supplied by the configuration.
    pub label_source: String,
    pub pairs_per_target: usize,
    pub splits: Vec<SplitManifest>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&SplitManifest> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Format(format!("manifest has no `{name}` split")))
    }

    pub fn label_stats(&self) -> LabelStats {
        LabelStats {
            mean: self.label_mean.clone(),
            std: self.label_std.clone(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        let m = self.components.len();
        if self.label_mean.len() != m || self.label_std.len() != m {
            return Err(Error::Format("label constants do not match components".into()));
        }
        if self.label_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format("label_std must be positive".into()));
        }
        for sp in &self.splits {
            if sp.inputs_shape[0] != sp.count
                || sp.labels_shape != [sp.count, m]
                || sp.errors_shape != [sp.count, 9]
            {
                return Err(Error::Format(format!("shapes of split `{}` disagree", sp.name)));
            }
        }
        Ok(())
    }
}

/// Per-sample error seeds depend only on the target and pair index, so a
/// sample is the same whichever split its target lands in.
fn sample_error(cfg: &RunConfig, scenario: &Scenario, target_id: usize, pair: usize) -> Result<NavError> {
    let index = (target_id * cfg.counts.pairs_per_target + pair) as u64;
    sample_errors(scenario, derive_seed(cfg.seed, stream::ERROR, index), &cfg.scales)
}

/// Renders every sample described by `cfg` and writes the dataset
/// directory `out`. The configuration and label statistics are fully
/// checked before anything is written; output bytes depend only on the
/// configuration.
pub fn build_dataset(cfg: &RunConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let scenario = cfg.scenario()?;
    let pairs = cfg.counts.pairs_per_target;
    let n_targets = cfg.counts.targets;

    let mut errors = Vec::with_capacity(n_targets * pairs);
    for t in 0..n_targets {
        for k in 0..pairs {
            errors.push(sample_error(cfg, &scenario, t, k)?);
        }
    }
    let (stats, label_source) = match &cfg.label_override {
        Some(o) => (
            LabelStats {
                mean: o.mean.clone(),
                std: o.std.clone(),
            },
            "override",
        ),
        None => (standardize_labels(&errors, &scenario)?.1, "dataset"),
    };
    let ids: Vec<usize> = (0..n_targets).collect();
    let split = split_by_target(&ids, cfg.counts.split, derive_seed(cfg.seed, stream::SPLIT, 0))?;

    let grid = cfg.image_grid(cfg.scene_center(&cfg.truth_trajectory()?))?;
    let (rows, cols) = grid.shape();

    fs::create_dir_all(out)?;
    let mut splits = Vec::new();
    for (name, targets) in SPLIT_NAMES.iter().zip(split.parts()) {
        let count = targets.len() * pairs;
        let sm = SplitManifest {
            name: name.to_string(),
            count,
            target_ids: targets.to_vec(),
            inputs_file: format!("{name}_inputs.f32"),
            inputs_shape: [count, CHANNELS, rows, cols],
            labels_file: format!("{name}_labels.f32"),
            labels_shape: [count, scenario.m()],
            errors_file: format!("{name}_errors.f64"),
            errors_shape: [count, 9],
        };
        let mut inputs = BufWriter::new(File::create(out.join(&sm.inputs_file))?);
        let mut labels = BufWriter::new(File::create(out.join(&sm.labels_file))?);
        let mut raw = BufWriter::new(File::create(out.join(&sm.errors_file))?);
        for &t in targets.iter() {
            let render = cfg.render_target(t).map_err(|e| Error::Sample {
                index: t * pairs,
                target_id: t,
                source: Box::new(e),
            })?;
            let records: Vec<SampleRecord> = (0..pairs)
                .into_par_iter()
                .map(|k| {
                    let index = t * pairs + k;
                    make_sample(&render, &errors[index], t, &scenario, &stats).map_err(|e| Error::Sample {
                        index,
                        target_id: t,
                        source: Box::new(e),
                    })
                })
                .collect::<Result<_>>()?;
            for r in &records {
                for v in r.input.iter() {
                    inputs.write_all(&v.to_le_bytes())?;
                }
                for v in &r.label {
                    labels.write_all(&(*v as f32).to_le_bytes())?;
                }
                for v in r.raw_error.to_array() {
                    raw.write_all(&v.to_le_bytes())?;
                }
            }
        }
        inputs.flush()?;
        labels.flush()?;
        raw.flush()?;
        splits.push(sm);
    }

    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        scenario: scenario.id(),
        aperture_s: cfg.geometry.aperture_s,
        seed: cfg.seed,
        components: scenario.component_names(),
        label_mean: stats.mean,
        label_std: stats.std,
        label_source: label_source.to_string(),
        pairs_per_target: pairs,
        splits,
    };
    let mut f = File::create(out.join("manifest.json"))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(manifest)
}

/// Tensors of one split, as stored.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub inputs: Array4<f32>,
    pub labels: Array2<f32>,
    pub errors: Array2<f64>,
}

fn read_exact_bytes(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let mut bytes = Vec::with_capacity(expected);
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "{} holds {} bytes, manifest implies {expected}",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    manifest.check()?;
    Ok(manifest)
}

/// Loads one split, checking file sizes against the manifest.
pub fn read_split(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<SplitData> {
    let sm = manifest.split(name)?;
    let ish = sm.inputs_shape;
    let n_in = ish.iter().product::<usize>();
    let n_lab = sm.labels_shape.iter().product::<usize>();
    let n_err = sm.errors_shape.iter().product::<usize>();
    let inputs = f32s(&read_exact_bytes(&dir.join(&sm.inputs_file), 4 * n_in)?);
    let labels = f32s(&read_exact_bytes(&dir.join(&sm.labels_file), 4 * n_lab)?);
    let errors = f64s(&read_exact_bytes(&dir.join(&sm.errors_file), 8 * n_err)?);
    let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
    Ok(SplitData {
        inputs: Array4::from_shape_vec((ish[0], ish[1], ish[2], ish[3]), inputs).map_err(shape_err)?,
        labels: Array2::from_shape_vec((sm.labels_shape[0], sm.labels_shape[1]), labels).map_err(shape_err)?,
        errors: Array2::from_shape_vec((sm.errors_shape[0], 9), errors).map_err(shape_err)?,
    })
}

impl SplitData {
    /// Channel `c` of sample `i` in f64.
    pub fn channel(&self, i: usize, c: usize) -> Array2<f64> {
        self.inputs.slice(s![i, c, .., ..]).mapv(f64::from)
    }

    pub fn raw_error(&self, i: usize) -> Result<NavError> {
        let row = self.errors.row(i);
        let mut v = [0.0; 9];
        for (d, s) in v.iter_mut().zip(row.iter()) {
            *d = *s;
        }
        NavError::from_array(v)
    }
}

/// SHA-256 over the names and contents of every regular file in `dir`,
/// visited in name order.
pub fn directory_digest(dir: &Path) -> Result<String> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name())
        .collect();
    names.sort();
    let mut h = Sha256::new();
    for name in names {
        let bytes = fs::read(dir.join(&name))?;
        h.update(name.to_string_lossy().as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn scenarios_match_the_active_error_table() {
        use ErrorAxis::*;
        assert_eq!(Scenario::new(1).unwrap().active_errors(), &[AtPos, CtPos]);
        assert_eq!(Scenario::new(2).unwrap().active_errors(), &[AtVel, CtVel]);
        assert_eq!(Scenario::new(4).unwrap().m(), 3);
        assert_eq!(Scenario::new(6).unwrap().m(), 6);
        assert!(Scenario::new(0).is_err());
        assert!(Scenario::new(7).unwrap_err().to_string().contains("scenario"));
    }

    #[test]
    fn scenario_one_samples_only_horizontal_position() {
        let sc = Scenario::new(1).unwrap();
        for seed in 0..50 {
            let e = sample_errors(&sc, seed, &ErrorScales::default()).unwrap();
            assert_eq!(e.dp_n.z, 0.0);
            assert_eq!(e.dv_n, crate::nav::Vec3::zeros());
            assert_eq!(e.dtheta_n, crate::nav::Vec3::zeros());
            assert!(e.dp_n.x != 0.0 && e.dp_n.y != 0.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let sc = Scenario::new(6).unwrap();
        let a = sample_errors(&sc, 9, &ErrorScales::default()).unwrap();
        assert_eq!(a, sample_errors(&sc, 9, &ErrorScales::default()).unwrap());
        assert_ne!(a, sample_errors(&sc, 10, &ErrorScales::default()).unwrap());
    }

    #[test]
    fn sampled_spread_matches_scales() {
        let sc = Scenario::new(6).unwrap();
        let scales = ErrorScales::default();
        let draws: Vec<NavError> = (0..10_000)
            .map(|i| sample_errors(&sc, derive_seed(1, stream::ERROR, i), &scales).unwrap())
            .collect();
        for &axis in sc.active_errors() {
            let vals: Vec<f64> = draws.iter().map(|e| e.get(axis)).collect();
            let (_, std) = moments(vals.iter());
            let want = scales.get(axis);
            assert!((std / want - 1.0).abs() < 0.05, "{axis}: {std} vs {want}");
        }
    }

    #[test]
    fn inactive_scale_may_be_zero_but_active_may_not() {
        let sc = Scenario::new(1).unwrap();
        let mut scales = ErrorScales::default();
        scales.d_vel = 0.0;
        assert!(sample_errors(&sc, 0, &scales).is_ok());
        scales.ct_pos = 0.0;
        let err = sample_errors(&sc, 0, &scales).unwrap_err();
        assert!(err.to_string().contains("scales.ct_pos"), "{err}");
    }

    #[test]
    fn preprocess_hand_example() {
        let z = preprocess_image(array![[1.0, 10.0, 100.0]].view(), 0.0).unwrap();
        let k = 1.224_744_871_391_589;
        assert_abs_diff_eq!(z[[0, 0]], -k, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[0, 1]], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[[0, 2]], k, epsilon = 1e-12);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Array2::from_elem((4, 4), 100.0);
        assert!(matches!(preprocess_image(img.view(), 0.0), Err(Error::DegenerateImage)));
    }

    #[test]
    fn preprocessed_image_is_standardized() {
        let img = Array2::from_shape_fn((9, 7), |(i, j)| 1.0 + (i * 7 + j) as f64 * 0.37);
        let z = preprocess_image(img.view(), LOG_FLOOR).unwrap();
        let (m, s) = moments(z.iter());
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(s, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn identical_channels_give_zero_difference() {
        let z = Array2::from_shape_fn((5, 5), |(i, j)| (i as f64) - (j as f64));
        let d = difference_channel(z.view(), z.view());
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn label_standardization() {
        let sc = Scenario::new(1).unwrap();
        let errs: Vec<NavError> = [-1.0, 1.0]
            .iter()
            .map(|&v| NavError::from_array([v, 2.0 * v, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        let (labels, stats) = standardize_labels(&errs, &sc).unwrap();
        assert_eq!(labels, array![[-1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(stats.std, vec![1.0, 2.0]);

        let errs: Vec<NavError> = (0..40)
            .map(|i| sample_errors(&sc, i, &ErrorScales::default()).unwrap())
            .collect();
        let (labels, stats) = standardize_labels(&errs, &sc).unwrap();
        for col in labels.columns() {
            let (m, s) = moments(col.iter());
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }
        let zero = Array2::zeros(labels.dim());
        for v in mse_metric(labels.view(), zero.view()).unwrap().per_component {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-9);
        }
        let back = stats.destandardize(&labels.row(3).to_vec());
        assert_abs_diff_eq!(back[0], errs[3].dp_n.x, epsilon = 1e-12);
    }

    #[test]
    fn constant_label_component_is_rejected() {
        let sc = Scenario::new(1).unwrap();
        let errs: Vec<NavError> = [-1.0, 1.0]
            .iter()
            .map(|&v| NavError::from_array([v, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        assert!(matches!(standardize_labels(&errs, &sc), Err(Error::ZeroVariance { component: 1 })));
        assert!(standardize_labels(&errs[..1], &sc).is_err());
    }

    #[test]
    fn split_sizes_follow_rounding() {
        assert_eq!(split_sizes(192, [0.7, 0.1, 0.2]).unwrap(), [134, 19, 39]);
        assert_eq!(split_sizes(10, [0.7, 0.1, 0.2]).unwrap(), [7, 1, 2]);
        assert!(split_sizes(2, [0.7, 0.1, 0.2]).is_err());
        assert!(split_sizes(10, [0.7, 0.2, 0.2]).is_err());
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let ids: Vec<usize> = (0..10).collect();
        let s = split_by_target(&ids, [0.7, 0.1, 0.2], 4).unwrap();
        assert_eq!(s, split_by_target(&ids, [0.7, 0.1, 0.2], 4).unwrap());
        let mut all: Vec<usize> = s.parts().concat();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert!(split_by_target(&[1, 1, 2, 3], [0.7, 0.1, 0.2], 0).is_err());
    }

    #[test]
    fn mse_examples() {
        let s = array![[1.0, -1.0]];
        let r = mse_metric(s.view(), Array2::zeros((1, 2)).view()).unwrap();
        assert_eq!(r.per_component, vec![1.0, 1.0]);
        assert_eq!(r.average, 1.0);
        assert_eq!(mse_metric(s.view(), s.view()).unwrap().average, 0.0);
        assert!(mse_metric(s.view(), Array2::zeros((2, 2)).view()).is_err());
    }
}
