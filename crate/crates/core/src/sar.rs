//! Point-target phase-history simulation and back-projection image
//! formation.
//!
//! Returns are modelled after ideal range compression: every target
//! contributes `σ · sinc((r - R)/ρ) · exp(-j4πR/λ)` to range bin `r` of a
//! pulse, where `R` is the antenna-to-target distance and `ρ` the range
//! resolution. Back-projection interpolates each pulse linearly at the pixel
//! range and removes the carrier phase. Both kernels parallelize over
//! independent rows and keep a fixed inner accumulation order, so their
//! output does not depend on the worker count.

use std::f64::consts::PI;
use std::io::{Read, Write};

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nav::{corrupt_trajectory_about, NavError, Trajectory, Vec3};

/// `sin(πx)/(πx)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarParams {
    /// Carrier wavelength, m.
    pub carrier_wavelength: f64,
    /// Post-compression range resolution, m.
    pub range_resolution: f64,
    pub range_bin_spacing: f64,
    pub n_range_bins: usize,
    /// Range of bin 0, m.
    pub range_window_start: f64,
}

impl RadarParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("carrier_wavelength", self.carrier_wavelength),
            ("range_resolution", self.range_resolution),
            ("range_bin_spacing", self.range_bin_spacing),
            ("range_window_start", self.range_window_start),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if self.n_range_bins < 2 {
            return Err(Error::invalid("n_range_bins", "need at least two range bins"));
        }
        if self.range_bin_spacing > self.range_resolution / 2.0 {
            return Err(Error::invalid(
                "range_bin_spacing",
                "must not exceed half the range resolution",
            ));
        }
        Ok(())
    }

    /// Parameters whose range window spans every antenna-to-point distance
    /// in `points` over `traj`, padded by `margin` on both sides.
    pub fn covering(
        carrier_wavelength: f64,
        range_resolution: f64,
        range_bin_spacing: f64,
        traj: &Trajectory,
        points: &[Vec3],
        margin: f64,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("points", "need at least one point to cover"));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in traj.samples() {
            for p in points {
                let r = (s.p_n - p).norm();
                lo = lo.min(r);
                hi = hi.max(r);
            }
        }
        if !(range_bin_spacing > 0.0) {
            return Err(Error::invalid("range_bin_spacing", "must be positive"));
        }
        let start = (lo - margin).max(range_bin_spacing);
        let n_range_bins = ((hi + margin - start) / range_bin_spacing).ceil() as usize + 1;
        let params = RadarParams {
            carrier_wavelength,
            range_resolution,
            range_bin_spacing,
            n_range_bins,
            range_window_start: start,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn window_end(&self) -> f64 {
        self.range_window_start + (self.n_range_bins - 1) as f64 * self.range_bin_spacing
    }

    pub fn bin_range(&self, bin: usize) -> f64 {
        self.range_window_start + bin as f64 * self.range_bin_spacing
    }

    /// Short stable digest identifying these parameters in image headers.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("radar params serialize");
        Sha256::digest(&canonical)[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    fn two_way_wavenumber(&self) -> f64 {
        4.0 * PI / self.carrier_wavelength
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointTarget {
    pub position: Vec3,
    pub reflectivity: f64,
}

/// Point scatterers lying on the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScene {
    targets: Vec<PointTarget>,
}

impl TargetScene {
    pub fn new(targets: Vec<PointTarget>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::invalid("targets", "scene needs at least one target"));
        }
        for (k, t) in targets.iter().enumerate() {
            if t.position.z != 0.0 {
                return Err(Error::invalid(
                    "targets",
                    format!("target {k} is off the ground plane (down = {})", t.position.z),
                ));
            }
            if !(t.reflectivity >= 0.0 && t.reflectivity.is_finite()) {
                return Err(Error::invalid(
                    "targets",
                    format!("target {k} has invalid reflectivity {}", t.reflectivity),
                ));
            }
            if !t.position.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("targets", format!("target {k} is not finite")));
            }
        }
        Ok(TargetScene { targets })
    }

    pub fn single(position: Vec3, reflectivity: f64) -> Result<Self> {
        Self::new(vec![PointTarget {
            position,
            reflectivity,
        }])
    }

    pub fn targets(&self) -> &[PointTarget] {
        &self.targets
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.targets.iter().map(|t| t.position).collect()
    }

    /// Union of two scenes, `self` first.
    pub fn merged(&self, other: &TargetScene) -> TargetScene {
        let mut targets = self.targets.clone();
        targets.extend_from_slice(&other.targets);
        TargetScene { targets }
    }

    pub fn translated(&self, offset: Vec3) -> Result<TargetScene> {
        Self::new(
            self.targets
                .iter()
                .map(|t| PointTarget {
                    position: t.position + offset,
                    ..*t
                })
                .collect(),
        )
    }
}

/// Range-compressed returns, one row per pulse.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseHistory {
    pulses: Array2<Complex64>,
    epochs: Vec<f64>,
}

impl PhaseHistory {
    pub fn new(pulses: Array2<Complex64>, epochs: Vec<f64>) -> Result<Self> {
        if pulses.nrows() != epochs.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} pulses but {} epochs",
                pulses.nrows(),
                epochs.len()
            )));
        }
        Ok(PhaseHistory { pulses, epochs })
    }

    pub fn pulses(&self) -> &Array2<Complex64> {
        &self.pulses
    }

    pub fn epochs(&self) -> &[f64] {
        &self.epochs
    }

    pub fn n_pulses(&self) -> usize {
        self.pulses.nrows()
    }

    pub fn n_bins(&self) -> usize {
        self.pulses.ncols()
    }

    /// Adds circular complex Gaussian noise with per-component standard
    /// deviation `std`, drawn in row-major order from `seed`.
    pub fn with_noise(mut self, std: f64, seed: u64) -> Result<Self> {
        if std == 0.0 {
            return Ok(self);
        }
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid("noise_std", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in self.pulses.iter_mut() {
            *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        Ok(self)
    }
}

/// Ground-plane pixel lattice centred on `center`. Rows run along-track,
/// columns cross-track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub center: [f64; 3],
    pub at_spacing: f64,
    pub ct_spacing: f64,
    pub n_at: usize,
    pub n_ct: usize,
}

impl ImageGrid {
    pub const DEFAULT_SIZE: usize = 80;

    pub fn new(center: Vec3, at_spacing: f64, ct_spacing: f64, n_at: usize, n_ct: usize) -> Result<Self> {
        let grid = ImageGrid {
            center: [center.x, center.y, center.z],
            at_spacing,
            ct_spacing,
            n_at,
            n_ct,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.at_spacing > 0.0 && self.ct_spacing > 0.0) {
            return Err(Error::invalid("grid", "pixel spacings must be positive"));
        }
        if self.n_at < 3 || self.n_ct < 3 {
            return Err(Error::invalid("grid", "need at least 3×3 pixels"));
        }
        if !self.center.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("grid", "center must be finite"));
        }
        Ok(())
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_at, self.n_ct)
    }

    pub fn pixel_position(&self, i: usize, j: usize) -> Vec3 {
        let di = i as f64 - (self.n_at as f64 - 1.0) / 2.0;
        let dj = j as f64 - (self.n_ct as f64 - 1.0) / 2.0;
        self.center() + Vec3::new(di * self.at_spacing, dj * self.ct_spacing, 0.0)
    }

    pub fn recentered(&self, center: Vec3) -> ImageGrid {
        ImageGrid {
            center: [center.x, center.y, center.z],
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SarImage {
    pixels: Array2<Complex64>,
    grid: ImageGrid,
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageHeader {
    n_at: usize,
    n_ct: usize,
    center: [f64; 3],
    at_spacing: f64,
    ct_spacing: f64,
    params_hash: String,
}

impl SarImage {
    pub fn new(pixels: Array2<Complex64>, grid: ImageGrid) -> Result<Self> {
        if pixels.dim() != grid.shape() {
            return Err(Error::DimensionMismatch(format!(
                "pixels {:?} vs grid {:?}",
                pixels.dim(),
                grid.shape()
            )));
        }
        Ok(SarImage { pixels, grid })
    }

    pub fn pixels(&self) -> &Array2<Complex64> {
        &self.pixels
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.pixels.mapv(|c| c.norm())
    }

    /// Location and value of the brightest pixel.
    pub fn peak(&self) -> ((usize, usize), f64) {
        let mut best = ((0, 0), f64::NEG_INFINITY);
        for ((i, j), c) in self.pixels.indexed_iter() {
            let m = c.norm();
            if m > best.1 {
                best = ((i, j), m);
            }
        }
        best
    }

    /// Writes a one-line JSON header and row-major little-endian f32
    /// `(re, im)` pairs.
    pub fn write_to<W: Write>(&self, mut w: W, params: &RadarParams) -> Result<()> {
        let header = ImageHeader {
            n_at: self.grid.n_at,
            n_ct: self.grid.n_ct,
            center: self.grid.center,
            at_spacing: self.grid.at_spacing,
            ct_spacing: self.grid.ct_spacing,
            params_hash: params.digest(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut body = Vec::with_capacity(self.pixels.len() * 8);
        for c in self.pixels.iter() {
            body.extend_from_slice(&(c.re as f32).to_le_bytes());
            body.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    /// Reads an image file, returning the image and its radar params hash.
    pub fn read_from<R: Read>(mut r: R) -> Result<(SarImage, String)> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("image header is not newline-terminated".into()))?;
        let header: ImageHeader = serde_json::from_slice(&bytes[..newline])?;
        let body = &bytes[newline + 1..];
        let n = header.n_at * header.n_ct;
        if body.len() != n * 8 {
            return Err(Error::Format(format!(
                "expected {} pixels, found {} bytes",
                n,
                body.len()
            )));
        }
        let values: Vec<Complex64> = body
            .chunks_exact(8)
            .map(|b| {
                let re = f32::from_le_bytes(b[..4].try_into().unwrap());
                let im = f32::from_le_bytes(b[4..].try_into().unwrap());
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        let grid = ImageGrid {
            center: header.center,
            at_spacing: header.at_spacing,
            ct_spacing: header.ct_spacing,
            n_at: header.n_at,
            n_ct: header.n_ct,
        };
        grid.validate()?;
        let pixels = Array2::from_shape_vec((header.n_at, header.n_ct), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((SarImage { pixels, grid }, header.params_hash))
    }
}

/// Simulates the range-compressed returns of `scene` seen along `traj`.
pub fn simulate_phase_history(
    traj: &Trajectory,
    scene: &TargetScene,
    params: &RadarParams,
) -> Result<PhaseHistory> {
    params.validate()?;
    let k = params.two_way_wavenumber();
    let (lo, hi) = (params.range_window_start, params.window_end());
    let bin_ranges: Vec<f64> = (0..params.n_range_bins).map(|b| params.bin_range(b)).collect();

    let rows: Vec<Vec<Complex64>> = traj
        .samples()
        .par_iter()
        .enumerate()
        .map(|(pulse, state)| {
            let mut row = vec![Complex64::new(0.0, 0.0); params.n_range_bins];
            for (target, tgt) in scene.targets().iter().enumerate() {
                let range = (state.p_n - tgt.position).norm();
                if !(lo..=hi).contains(&range) {
                    return Err(Error::TargetOutOfWindow {
                        pulse,
                        target,
                        range,
                    });
                }
                if tgt.reflectivity == 0.0 {
                    continue;
                }
                let (s, c) = (-k * range).sin_cos();
                let carrier = Complex64::new(c, s) * tgt.reflectivity;
                for (v, r) in row.iter_mut().zip(&bin_ranges) {
                    *v += carrier * sinc((r - range) / params.range_resolution);
                }
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;

    let mut pulses = Array2::zeros((rows.len(), params.n_range_bins));
    for (mut dst, src) in pulses.rows_mut().into_iter().zip(&rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    let epochs = traj.samples().iter().map(|s| s.t).collect();
    PhaseHistory::new(pulses, epochs)
}

/// Forms an image on `grid` by back-projecting `ph` along `traj`.
///
/// Pixel ranges falling outside the range window contribute nothing.
pub fn backproject(
    ph: &PhaseHistory,
    traj: &Trajectory,
    grid: &ImageGrid,
    params: &RadarParams,
) -> Result<SarImage> {
    if traj.len() != ph.n_pulses() {
        return Err(Error::DimensionMismatch(format!(
            "trajectory has {} samples but phase history has {} pulses",
            traj.len(),
            ph.n_pulses()
        )));
    }
    if ph.n_bins() != params.n_range_bins {
        return Err(Error::DimensionMismatch(format!(
            "phase history has {} bins but params declare {}",
            ph.n_bins(),
            params.n_range_bins
        )));
    }
    params.validate()?;
    grid.validate()?;

    let k = params.two_way_wavenumber();
    let last = (params.n_range_bins - 1) as f64;
    let antennas: Vec<Vec3> = traj.samples().iter().map(|s| s.p_n).collect();
    let pulses = ph.pulses();
    let pulse_rows: Vec<&[Complex64]> = pulses
        .rows()
        .into_iter()
        .map(|r| r.to_slice().expect("phase history rows are contiguous"))
        .collect();

    let rows: Vec<Vec<Complex64>> = (0..grid.n_at)
        .into_par_iter()
        .map(|i| {
            (0..grid.n_ct)
                .map(|j| {
                    let pixel = grid.pixel_position(i, j);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (antenna, row) in antennas.iter().zip(&pulse_rows) {
                        let range = (antenna - pixel).norm();
                        let idx = (range - params.range_window_start) / params.range_bin_spacing;
                        if !(0.0..=last).contains(&idx) {
                            continue;
                        }
                        let i0 = (idx.floor() as usize).min(row.len() - 2);
                        let frac = idx - i0 as f64;
                        let sample = row[i0] * (1.0 - frac) + row[i0 + 1] * frac;
                        let (s, c) = (k * range).sin_cos();
                        acc += sample * Complex64::new(c, s);
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let mut pixels = Array2::zeros(grid.shape());
    for (mut dst, src) in pixels.rows_mut().into_iter().zip(&rows) {
        dst.assign(&ndarray::ArrayView1::from(src.as_slice()));
    }
    SarImage::new(pixels, *grid)
}

/// Epoch at which an injected navigation error is specified.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorEpoch {
    /// First sample of the aperture.
    Start,
    /// Aperture midpoint, the zero-Doppler epoch for a broadside scene.
    #[default]
    Center,
}

impl ErrorEpoch {
    pub fn reference_time(self, traj: &Trajectory) -> f64 {
        match self {
            ErrorEpoch::Start => traj.start_time(),
            ErrorEpoch::Center => traj.mid_time(),
        }
    }
}

/// The shared pieces of an image pair: the true trajectory, its phase
/// history and the reference image. Distorted images are rendered on demand
/// for any injected error.
#[derive(Debug, Clone)]
pub struct SceneRender {
    truth: Trajectory,
    phase_history: PhaseHistory,
    reference: SarImage,
    grid: ImageGrid,
    params: RadarParams,
    epoch: ErrorEpoch,
}

impl SceneRender {
    pub fn new(
        truth: &Trajectory,
        scene: &TargetScene,
        grid: &ImageGrid,
        params: &RadarParams,
        epoch: ErrorEpoch,
    ) -> Result<Self> {
        let phase_history = simulate_phase_history(truth, scene, params)?;
        Self::from_phase_history(truth, phase_history, grid, params, epoch)
    }

    pub fn from_phase_history(
        truth: &Trajectory,
        phase_history: PhaseHistory,
        grid: &ImageGrid,
        params: &RadarParams,
        epoch: ErrorEpoch,
    ) -> Result<Self> {
        let reference = backproject(&phase_history, truth, grid, params)?;
        Ok(SceneRender {
            truth: truth.clone(),
            phase_history,
            reference,
            grid: *grid,
            params: *params,
            epoch,
        })
    }

    pub fn reference(&self) -> &SarImage {
        &self.reference
    }

    pub fn phase_history(&self) -> &PhaseHistory {
        &self.phase_history
    }

    pub fn params(&self) -> &RadarParams {
        &self.params
    }

    pub fn grid(&self) -> &ImageGrid {
        &self.grid
    }

    /// The trajectory an INS with error `err` would report.
    pub fn estimated_trajectory(&self, err: &NavError) -> Trajectory {
        corrupt_trajectory_about(&self.truth, err, self.epoch.reference_time(&self.truth))
    }

    pub fn distorted(&self, err: &NavError) -> Result<SarImage> {
        err.validate()?;
        backproject(
            &self.phase_history,
            &self.estimated_trajectory(err),
            &self.grid,
            &self.params,
        )
    }
}

/// Reference and distorted images of `scene`, both back-projected from the
/// one phase history collected along the true trajectory.
pub fn form_image_pair(
    truth: &Trajectory,
    err0: &NavError,
    scene: &TargetScene,
    grid: &ImageGrid,
    params: &RadarParams,
    epoch: ErrorEpoch,
) -> Result<(SarImage, SarImage)> {
    let render = SceneRender::new(truth, scene, grid, params, epoch)?;
    let distorted = render.distorted(err0)?;
    Ok((render.reference, distorted))
}
