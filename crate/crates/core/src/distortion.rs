//! Shift and blur measurement between a reference and a distorted image,
//! the navigation-error sensitivity sweep, and the shift-inversion baseline
//! estimator for position-only errors.
//!
//! Registration maximizes the normalized cross-correlation of Gaussian-
//! smoothed log-magnitude images over integer displacements, then refines
//! each axis separately with a three-point quadratic fit. Smoothing keeps a
//! strongly defocused response from locking onto one of its sidelobes. Blur is scored with the normalized
//! fourth-power sharpness `Σ|I|⁴ / (Σ|I|²)²`.

use std::fmt;
use std::io::Write;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nav::{ErrorAxis, NavError};
use crate::sar::{SarImage, SceneRender};

/// Offset added to magnitudes before `log10`.
pub const LOG_FLOOR: f64 = 1e-12;

pub fn log_magnitude(img: &SarImage) -> Array2<f64> {
    img.pixels().mapv(|c| (c.norm() + LOG_FLOOR).log10())
}

/// Registration and classification knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSettings {
    /// Largest integer displacement searched on each axis, pixels.
    pub max_shift: usize,
    /// Gaussian smoothing applied to both images before correlation,
    /// pixels; zero disables it.
    pub smoothing_sigma: f64,
    /// Registrations peaking below this correlation are rejected.
    pub min_correlation: f64,
    /// A displacement larger than this counts as a shift, pixels.
    pub shift_threshold: f64,
    /// A sharpness ratio below this counts as blur.
    pub blur_threshold: f64,
    /// Sharpness ratios expected for attitude errors, inclusive. The upper
    /// edge sits just above one so that round-off-level sharpening of an
    /// unaffected image still counts.
    pub attitude_band: (f64, f64),
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        AnalysisSettings {
            max_shift: 24,
            smoothing_sigma: 2.0,
            min_correlation: 0.2,
            shift_threshold: 0.5,
            blur_threshold: 0.95,
            attitude_band: (0.9, 1.001),
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_shift == 0 {
            return Err(Error::invalid("analysis.max_shift", "must be at least 1"));
        }
        if !(self.smoothing_sigma >= 0.0 && self.smoothing_sigma <= 8.0) {
            return Err(Error::invalid("analysis.smoothing_sigma", "must lie in [0, 8]"));
        }
        if !(0.0..1.0).contains(&self.min_correlation) {
            return Err(Error::invalid("analysis.min_correlation", "must lie in [0, 1)"));
        }
        if !(self.shift_threshold > 0.0) {
            return Err(Error::invalid("analysis.shift_threshold", "must be positive"));
        }
        if !(self.blur_threshold > 0.0 && self.blur_threshold <= 1.0) {
            return Err(Error::invalid("analysis.blur_threshold", "must lie in (0, 1]"));
        }
        let (lo, hi) = self.attitude_band;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::invalid("analysis.attitude_band", "need 0 < low <= high"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Registration {
    pub at_shift: f64,
    pub ct_shift: f64,
    pub peak_correlation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistortionMeasurement {
    /// Signed along-track displacement of the distorted image, pixels.
    pub at_shift: f64,
    pub ct_shift: f64,
    /// Sharpness of the distorted image over that of the reference.
    pub sharpness_ratio: f64,
    pub peak_correlation: f64,
}

/// Pearson correlation of `a[i, j]` with `b[i + da, j + dc]` over the
/// overlap of the two frames.
fn shifted_correlation(a: &ArrayView2<f64>, b: &ArrayView2<f64>, da: isize, dc: isize) -> f64 {
    let (rows, cols) = a.dim();
    let i0 = 0.max(-da) as usize;
    let i1 = (rows as isize).min(rows as isize - da) as usize;
    let j0 = 0.max(-dc) as usize;
    let j1 = (cols as isize).min(cols as isize - dc) as usize;
    if i1 <= i0 || j1 <= j0 {
        return 0.0;
    }
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in i0..i1 {
        let bi = (i as isize + da) as usize;
        for j in j0..j1 {
            let x = a[[i, j]];
            let y = b[[bi, (j as isize + dc) as usize]];
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
    }
    let n = ((i1 - i0) * (j1 - j0)) as f64;
    let cov = sab - sa * sb / n;
    let var = (saa - sa * sa / n) * (sbb - sb * sb / n);
    if var <= 0.0 {
        0.0
    } else {
        cov / var.sqrt()
    }
}

/// Separable Gaussian blur truncated at three standard deviations, with the
/// kernel renormalized where it overhangs the frame.
pub fn gaussian_smooth(a: ArrayView2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return a.to_owned();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let blur_axis = |src: ArrayView2<f64>, axis: usize| {
        let (rows, cols) = src.dim();
        let len = if axis == 0 { rows } else { cols } as isize;
        Array2::from_shape_fn((rows, cols), |(i, j)| {
            let pos = if axis == 0 { i } else { j } as isize;
            let (mut acc, mut weight) = (0.0, 0.0);
            for (k, w) in (-r..=r).zip(&kernel) {
                let q = pos + k;
                if q < 0 || q >= len {
                    continue;
                }
                let v = if axis == 0 { src[[q as usize, j]] } else { src[[i, q as usize]] };
                acc += w * v;
                weight += w;
            }
            acc / weight
        })
    };
    let once = blur_axis(a, 0);
    blur_axis(once.view(), 1)
}

fn quadratic_peak_offset(minus: f64, center: f64, plus: f64) -> f64 {
    let curvature = minus - 2.0 * center + plus;
    if curvature >= 0.0 {
        return 0.0;
    }
    (0.5 * (minus - plus) / curvature).clamp(-0.5, 0.5)
}

/// Finds the displacement `d` for which `image[x] ≈ reference[x - d]`.
pub fn register(
    reference: ArrayView2<f64>,
    image: ArrayView2<f64>,
    settings: &AnalysisSettings,
) -> Result<Registration> {
    if reference.dim() != image.dim() {
        return Err(Error::DimensionMismatch(format!(
            "reference {:?} vs image {:?}",
            reference.dim(),
            image.dim()
        )));
    }
    let (rows, cols) = reference.dim();
    let reference = gaussian_smooth(reference, settings.smoothing_sigma);
    let image = gaussian_smooth(image, settings.smoothing_sigma);
    let (reference, image) = (reference.view(), image.view());
    let m_at = settings.max_shift.min(rows.saturating_sub(2)) as isize;
    let m_ct = settings.max_shift.min(cols.saturating_sub(2)) as isize;
    let side_ct = (2 * m_ct + 1) as usize;

    let surface: Vec<f64> = (0..(2 * m_at + 1) as usize * side_ct)
        .into_par_iter()
        .map(|k| {
            let da = (k / side_ct) as isize - m_at;
            let dc = (k % side_ct) as isize - m_ct;
            shifted_correlation(&reference, &image, da, dc)
        })
        .collect();
    let at = |da: isize, dc: isize| surface[((da + m_at) as usize) * side_ct + (dc + m_ct) as usize];

    let mut best = (0isize, 0isize, f64::NEG_INFINITY);
    for da in -m_at..=m_at {
        for dc in -m_ct..=m_ct {
            let c = at(da, dc);
            if c > best.2 {
                best = (da, dc, c);
            }
        }
    }
    let (da, dc, peak) = best;
    if !(peak >= settings.min_correlation) {
        return Err(Error::NoRegistration {
            peak_correlation: peak,
        });
    }
    let sub_at = if da.abs() < m_at {
        quadratic_peak_offset(at(da - 1, dc), peak, at(da + 1, dc))
    } else {
        0.0
    };
    let sub_ct = if dc.abs() < m_ct {
        quadratic_peak_offset(at(da, dc - 1), peak, at(da, dc + 1))
    } else {
        0.0
    };
    Ok(Registration {
        at_shift: da as f64 + sub_at,
        ct_shift: dc as f64 + sub_ct,
        peak_correlation: peak,
    })
}

fn check_same_grid(reference: &SarImage, image: &SarImage) -> Result<()> {
    if reference.grid() != image.grid() {
        return Err(Error::DimensionMismatch("images are on different grids".into()));
    }
    Ok(())
}

/// `(at_shift, ct_shift)` of `img` relative to `reference`, in pixels.
pub fn measure_shift(reference: &SarImage, img: &SarImage) -> Result<(f64, f64)> {
    let reg = register_images(reference, img, &AnalysisSettings::default())?;
    Ok((reg.at_shift, reg.ct_shift))
}

pub fn register_images(
    reference: &SarImage,
    img: &SarImage,
    settings: &AnalysisSettings,
) -> Result<Registration> {
    check_same_grid(reference, img)?;
    register(
        log_magnitude(reference).view(),
        log_magnitude(img).view(),
        settings,
    )
}

/// Normalized fourth-power sharpness `Σ|I|⁴ / (Σ|I|²)²` of a magnitude
/// image.
pub fn sharpness(magnitude: ArrayView2<f64>) -> Result<f64> {
    let (mut e2, mut e4) = (0.0, 0.0);
    for &m in magnitude.iter() {
        let p = m * m;
        e2 += p;
        e4 += p * p;
    }
    if !(e2 > 0.0) {
        return Err(Error::ZeroEnergy);
    }
    Ok(e4 / (e2 * e2))
}

/// Sharpness of `img` relative to `reference`; below one means blurrier.
pub fn measure_blur(reference: &SarImage, img: &SarImage) -> Result<f64> {
    check_same_grid(reference, img)?;
    Ok(sharpness(img.magnitude().view())? / sharpness(reference.magnitude().view())?)
}

pub fn measure(
    reference: &SarImage,
    img: &SarImage,
    settings: &AnalysisSettings,
) -> Result<DistortionMeasurement> {
    let reg = register_images(reference, img, settings)?;
    Ok(DistortionMeasurement {
        at_shift: reg.at_shift,
        ct_shift: reg.ct_shift,
        sharpness_ratio: measure_blur(reference, img)?,
        peak_correlation: reg.peak_correlation,
    })
}

/// Observed distortion pattern of one image pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Classification {
    pub shift_at: bool,
    pub shift_ct: bool,
    pub blur_at: bool,
}

impl Classification {
    pub const NONE: Classification = Classification {
        shift_at: false,
        shift_ct: false,
        blur_at: false,
    };

    pub fn of(m: &DistortionMeasurement, settings: &AnalysisSettings) -> Self {
        Classification {
            shift_at: m.at_shift.abs() > settings.shift_threshold,
            shift_ct: m.ct_shift.abs() > settings.shift_threshold,
            blur_at: m.sharpness_ratio < settings.blur_threshold,
        }
    }

    fn shift_only(at: bool, ct: bool) -> Self {
        Classification {
            shift_at: at,
            shift_ct: ct,
            blur_at: false,
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let labels: Vec<&str> = [
            (self.shift_at, "SHIFT_AT"),
            (self.shift_ct, "SHIFT_CT"),
            (self.blur_at, "BLUR_AT"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        if labels.is_empty() {
            f.write_str("NONE")
        } else {
            f.write_str(&labels.join("+"))
        }
    }
}

/// What a nonzero error along an axis does to the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedEffect {
    Distortion(Classification),
    /// No shift and a sharpness ratio inside the attitude band.
    SmallBlur,
}

pub fn expected_effect(axis: ErrorAxis) -> ExpectedEffect {
    use ErrorAxis::*;
    match axis {
        AtPos | CtVel | DVel => ExpectedEffect::Distortion(Classification::shift_only(true, false)),
        CtPos | DPos => ExpectedEffect::Distortion(Classification::shift_only(false, true)),
        AtVel => ExpectedEffect::Distortion(Classification {
            blur_at: true,
            ..Classification::NONE
        }),
        AtAtt | CtAtt | DAtt => ExpectedEffect::SmallBlur,
    }
}

/// Sweep magnitudes sized for the default desk geometry: the demonstrated
/// position and along-track velocity errors, cross-track and down velocity
/// errors small enough that the resulting along-track shift stays on the
/// grid, and attitude errors in the small-blur regime of each axis.
pub fn default_magnitudes(axis: ErrorAxis) -> Vec<f64> {
    let scale = match axis {
        ErrorAxis::AtPos | ErrorAxis::CtPos | ErrorAxis::DPos => 3.0,
        ErrorAxis::AtVel => 0.4,
        ErrorAxis::CtVel | ErrorAxis::DVel => 0.02,
        ErrorAxis::AtAtt => 5e-5,
        ErrorAxis::CtAtt => 2e-3,
        ErrorAxis::DAtt => 1e-2,
    };
    vec![-scale, -0.5 * scale, 0.0, 0.5 * scale, scale]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: ErrorAxis,
    pub magnitude: f64,
    pub measurement: DistortionMeasurement,
    pub classification: Classification,
}

/// Measures the distortion produced by each magnitude of a single-axis
/// error on one rendered scene.
pub fn sensitivity_sweep(
    render: &SceneRender,
    axis: ErrorAxis,
    magnitudes: &[f64],
    settings: &AnalysisSettings,
) -> Result<Vec<SweepRow>> {
    if magnitudes.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("magnitudes", "must be finite"));
    }
    magnitudes
        .par_iter()
        .map(|&magnitude| {
            let err = NavError::along(axis, magnitude)?;
            let distorted = render.distorted(&err)?;
            let measurement = measure(render.reference(), &distorted, settings)?;
            Ok(SweepRow {
                axis,
                magnitude,
                measurement,
                classification: Classification::of(&measurement, settings),
            })
        })
        .collect()
}

/// Rows whose observed pattern disagrees with the expected effect of their
/// axis, described for reporting. Zero-magnitude rows must show nothing.
pub fn table_mismatches(rows: &[SweepRow], settings: &AnalysisSettings) -> Vec<String> {
    let mut out = Vec::new();
    for row in rows {
        let m = &row.measurement;
        let ok = if row.magnitude == 0.0 {
            row.classification == Classification::NONE
        } else {
            match expected_effect(row.axis) {
                ExpectedEffect::Distortion(expected) => row.classification == expected,
                ExpectedEffect::SmallBlur => {
                    let (lo, hi) = settings.attitude_band;
                    !row.classification.shift_at
                        && !row.classification.shift_ct
                        && m.sharpness_ratio >= lo
                        && m.sharpness_ratio <= hi
                }
            }
        };
        if !ok {
            out.push(format!(
                "{} = {}: observed {} (at {:.3} px, ct {:.3} px, sharpness {:.4})",
                row.axis, row.magnitude, row.classification, m.at_shift, m.ct_shift, m.sharpness_ratio
            ));
        }
    }
    out
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "error_axis,magnitude,at_shift_px,ct_shift_px,sharpness_ratio,classification")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.6},{:.6},{:.6},{}",
            r.axis,
            r.magnitude,
            r.measurement.at_shift,
            r.measurement.ct_shift,
            r.measurement.sharpness_ratio,
            r.classification
        )?;
    }
    Ok(())
}

/// Affine map from horizontal position error (m) to image shift (px),
/// `shift = A·[dp_at, dp_ct] + b`, fitted by least squares.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftCalibration {
    pub gain: Matrix2<f64>,
    pub offset: Vector2<f64>,
}

impl ShiftCalibration {
    /// Fits the map from `(dp_at, dp_ct, at_shift, ct_shift)` samples.
    pub fn fit(samples: &[(f64, f64, f64, f64)]) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::TooFew {
                what: "calibration samples",
                needed: 3,
                got: samples.len(),
            });
        }
        let mut normal = Matrix3::zeros();
        let mut rhs_at = Vector3::zeros();
        let mut rhs_ct = Vector3::zeros();
        for &(e_at, e_ct, s_at, s_ct) in samples {
            let x = Vector3::new(e_at, e_ct, 1.0);
            normal += x * x.transpose();
            rhs_at += x * s_at;
            rhs_ct += x * s_ct;
        }
        let lu = normal.lu();
        let (row_at, row_ct) = match (lu.solve(&rhs_at), lu.solve(&rhs_ct)) {
            (Some(a), Some(c)) => (a, c),
            _ => return Err(Error::invalid("calibration", "samples do not span both axes")),
        };
        let gain = Matrix2::new(row_at[0], row_at[1], row_ct[0], row_ct[1]);
        if gain.determinant().abs() < 1e-9 {
            return Err(Error::invalid("calibration", "shift response is singular"));
        }
        Ok(ShiftCalibration {
            gain,
            offset: Vector2::new(row_at[2], row_ct[2]),
        })
    }

    /// Sweeps AT and CT position errors over `magnitudes` on `render` and
    /// fits the map to the measured shifts.
    pub fn from_sweep(
        render: &SceneRender,
        magnitudes: &[f64],
        settings: &AnalysisSettings,
    ) -> Result<Self> {
        let mut samples = Vec::new();
        for axis in [ErrorAxis::AtPos, ErrorAxis::CtPos] {
            for row in sensitivity_sweep(render, axis, magnitudes, settings)? {
                let (e_at, e_ct) = match axis {
                    ErrorAxis::AtPos => (row.magnitude, 0.0),
                    _ => (0.0, row.magnitude),
                };
                samples.push((e_at, e_ct, row.measurement.at_shift, row.measurement.ct_shift));
            }
        }
        Self::fit(&samples)
    }

    /// Position error `(dp_at, dp_ct)` in metres producing `shift`.
    pub fn invert(&self, at_shift: f64, ct_shift: f64) -> (f64, f64) {
        let inv = self.gain.try_inverse().expect("gain checked non-singular at fit");
        let e = inv * (Vector2::new(at_shift, ct_shift) - self.offset);
        (e[0], e[1])
    }
}

/// Estimates horizontal position error from the shift between a reference
/// and a distorted image.
pub fn baseline_estimate_scenario1(
    reference: &SarImage,
    img: &SarImage,
    calibration: &ShiftCalibration,
    settings: &AnalysisSettings,
) -> Result<(f64, f64)> {
    let reg = register_images(reference, img, settings)?;
    Ok(calibration.invert(reg.at_shift, reg.ct_shift))
}

/// Same estimate from already log-transformed (and possibly standardized)
/// images, as stored in dataset tensors. Correlation is invariant to the
/// per-image affine standardization.
pub fn baseline_estimate_from_log(
    reference: ArrayView2<f64>,
    img: ArrayView2<f64>,
    calibration: &ShiftCalibration,
    settings: &AnalysisSettings,
) -> Result<(f64, f64)> {
    let reg = register(reference, img, settings)?;
    Ok(calibration.invert(reg.at_shift, reg.ct_shift))
}
