//! Strapdown navigation states, first-order error propagation and the
//! correction relations linking true and estimated trajectories.
//!
//! The navigation frame is along-track / cross-track / down (AT/CT/D) with
//! the down axis along gravity. The ground plane is `z = 0`, so an aircraft
//! at altitude `h` sits at `z = -h`.
//!
//! The nine-element error state `[δp; δv; δθ]` grows over an interval `Δt`
//! through the transition matrix
//!
//! ```text
//! | I   IΔt   (ν×)Δt²/2 |
//! | 0   I     (ν×)Δt    |
//! | 0   0     I         |
//! ```
//!
//! where `ν` is the nominal specific force, constant for straight and level
//! flight.

use std::io::{Read, Write};

use nalgebra::{Matrix3, Quaternion, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type ErrorVector = SVector<f64, 9>;

/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.80665;

/// Position, velocity and attitude at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    /// Position in the nav frame, m.
    pub p_n: Vec3,
    /// Velocity in the nav frame, m/s.
    pub v_n: Vec3,
    /// Body-to-nav attitude, scalar-first unit quaternion.
    pub q_bn: Quaternion<f64>,
    /// Seconds since aperture start.
    pub t: f64,
}

/// One of the nine components of the navigation error state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorAxis {
    AtPos,
    CtPos,
    DPos,
    AtVel,
    CtVel,
    DVel,
    AtAtt,
    CtAtt,
    DAtt,
}

impl ErrorAxis {
    pub const ALL: [ErrorAxis; 9] = [
        ErrorAxis::AtPos,
        ErrorAxis::CtPos,
        ErrorAxis::DPos,
        ErrorAxis::AtVel,
        ErrorAxis::CtVel,
        ErrorAxis::DVel,
        ErrorAxis::AtAtt,
        ErrorAxis::CtAtt,
        ErrorAxis::DAtt,
    ];

    /// Position in the nine-element error vector.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorAxis::AtPos => "at_pos",
            ErrorAxis::CtPos => "ct_pos",
            ErrorAxis::DPos => "d_pos",
            ErrorAxis::AtVel => "at_vel",
            ErrorAxis::CtVel => "ct_vel",
            ErrorAxis::DVel => "d_vel",
            ErrorAxis::AtAtt => "at_att",
            ErrorAxis::CtAtt => "ct_att",
            ErrorAxis::DAtt => "d_att",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn unit(self) -> &'static str {
        match self.index() / 3 {
            0 => "m",
            1 => "m/s",
            _ => "rad",
        }
    }

    pub fn is_attitude(self) -> bool {
        self.index() >= 6
    }
}

impl std::fmt::Display for ErrorAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Nine-element navigation error `(δp, δv, δθ)` resolved in the nav frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavError {
    pub dp_n: Vec3,
    pub dv_n: Vec3,
    pub dtheta_n: Vec3,
}

impl NavError {
    /// Largest attitude error magnitude accepted by the first-order model.
    pub const MAX_ATTITUDE: f64 = 0.1;

    pub fn new(dp_n: Vec3, dv_n: Vec3, dtheta_n: Vec3) -> Result<Self> {
        let err = NavError {
            dp_n,
            dv_n,
            dtheta_n,
        };
        err.validate()?;
        Ok(err)
    }

    pub fn zero() -> Self {
        NavError {
            dp_n: Vec3::zeros(),
            dv_n: Vec3::zeros(),
            dtheta_n: Vec3::zeros(),
        }
    }

    pub fn from_array(values: [f64; 9]) -> Result<Self> {
        Self::new(
            Vec3::new(values[0], values[1], values[2]),
            Vec3::new(values[3], values[4], values[5]),
            Vec3::new(values[6], values[7], values[8]),
        )
    }

    /// A single-component error along `axis`.
    pub fn along(axis: ErrorAxis, magnitude: f64) -> Result<Self> {
        let mut values = [0.0; 9];
        values[axis.index()] = magnitude;
        Self::from_array(values)
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut out = [0.0; 9];
        out[..3].copy_from_slice(self.dp_n.as_slice());
        out[3..6].copy_from_slice(self.dv_n.as_slice());
        out[6..].copy_from_slice(self.dtheta_n.as_slice());
        out
    }

    pub fn get(&self, axis: ErrorAxis) -> f64 {
        self.to_array()[axis.index()]
    }

    pub fn to_vector(&self) -> ErrorVector {
        ErrorVector::from_row_slice(&self.to_array())
    }

    /// Repacks a state vector without the small-angle check, for internal
    /// propagation results.
    fn from_vector_unchecked(v: &ErrorVector) -> Self {
        NavError {
            dp_n: Vec3::new(v[0], v[1], v[2]),
            dv_n: Vec3::new(v[3], v[4], v[5]),
            dtheta_n: Vec3::new(v[6], v[7], v[8]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteError);
        }
        let magnitude = self.dtheta_n.norm();
        if magnitude >= Self::MAX_ATTITUDE {
            return Err(Error::AttitudeTooLarge {
                magnitude,
                limit: Self::MAX_ATTITUDE,
            });
        }
        Ok(())
    }
}

/// Uniformly sampled navigation states over one aperture.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    samples: Vec<NavState>,
    dt: f64,
    nu_n: Vec3,
}

impl Trajectory {
    const EPOCH_TOLERANCE: f64 = 1e-12;

    pub fn new(samples: Vec<NavState>, dt: f64, nu_n: Vec3) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("samples", "trajectory must be non-empty"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be positive, got {dt}")));
        }
        if samples[0].t < 0.0 {
            return Err(Error::invalid("t", "epochs must be non-negative"));
        }
        for (k, pair) in samples.windows(2).enumerate() {
            let step = pair[1].t - pair[0].t;
            if (step - dt).abs() > Self::EPOCH_TOLERANCE {
                return Err(Error::invalid(
                    "t",
                    format!("epoch spacing {step} at sample {} differs from dt = {dt}", k + 1),
                ));
            }
        }
        Ok(Trajectory { samples, dt, nu_n })
    }

    pub fn samples(&self) -> &[NavState] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nu_n(&self) -> Vec3 {
        self.nu_n
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Epoch halfway through the aperture.
    pub fn mid_time(&self) -> f64 {
        0.5 * (self.start_time() + self.end_time())
    }

    /// Antenna position halfway through the aperture, interpolated between
    /// the two central samples for even sample counts.
    pub fn mid_position(&self) -> Vec3 {
        let n = self.samples.len();
        if n % 2 == 1 {
            self.samples[n / 2].p_n
        } else {
            0.5 * (self.samples[n / 2 - 1].p_n + self.samples[n / 2].p_n)
        }
    }

    /// Rigidly translates every position.
    pub fn translated(&self, offset: Vec3) -> Trajectory {
        let samples = self
            .samples
            .iter()
            .map(|s| NavState {
                p_n: s.p_n + offset,
                ..*s
            })
            .collect();
        Trajectory {
            samples,
            dt: self.dt,
            nu_n: self.nu_n,
        }
    }

    /// Writes the binary trajectory format: a one-line JSON header followed
    /// by `count` rows of `(t, p[3], v[3], q[4])` as little-endian f64.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = TrajectoryHeader {
            count: self.samples.len(),
            dt: self.dt,
            nu_n: [self.nu_n.x, self.nu_n.y, self.nu_n.z],
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for s in &self.samples {
            let row = [
                s.t, s.p_n.x, s.p_n.y, s.p_n.z, s.v_n.x, s.v_n.y, s.v_n.z, s.q_bn.w, s.q_bn.i,
                s.q_bn.j, s.q_bn.k,
            ];
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Trajectory> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("trajectory header is not newline-terminated".into()))?;
        let header: TrajectoryHeader = serde_json::from_slice(&bytes[..newline])?;
        let body = &bytes[newline + 1..];
        if body.len() != header.count * 11 * 8 {
            return Err(Error::Format(format!(
                "expected {} trajectory rows, found {} bytes",
                header.count,
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(11 * 8)
            .map(|row| {
                let f: Vec<f64> = row
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                NavState {
                    t: f[0],
                    p_n: Vec3::new(f[1], f[2], f[3]),
                    v_n: Vec3::new(f[4], f[5], f[6]),
                    q_bn: Quaternion::new(f[7], f[8], f[9], f[10]),
                }
            })
            .collect();
        Trajectory::new(samples, header.dt, Vec3::from(header.nu_n))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryHeader {
    count: usize,
    dt: f64,
    nu_n: [f64; 3],
}

/// The 9×9 error-state transition matrix over one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionMatrix {
    phi: SMatrix<f64, 9, 9>,
}

impl TransitionMatrix {
    pub fn matrix(&self) -> &SMatrix<f64, 9, 9> {
        &self.phi
    }

    /// The 3×3 block at block-row `row`, block-column `col`.
    pub fn block(&self, row: usize, col: usize) -> Matrix3<f64> {
        self.phi.fixed_view::<3, 3>(3 * row, 3 * col).into_owned()
    }

    pub fn apply(&self, err: &NavError) -> NavError {
        NavError::from_vector_unchecked(&(self.phi * err.to_vector()))
    }

    /// Closed form for any signed interval; negative `dt` propagates
    /// backwards and is the exact inverse of the forward map.
    fn closed_form(nu_n: &Vec3, dt: f64) -> Self {
        let nu_x = cross_matrix(nu_n);
        let mut phi = SMatrix::<f64, 9, 9>::identity();
        phi.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(Matrix3::identity() * dt));
        phi.fixed_view_mut::<3, 3>(0, 6)
            .copy_from(&(nu_x * (dt * dt / 2.0)));
        phi.fixed_view_mut::<3, 3>(3, 6).copy_from(&(nu_x * dt));
        TransitionMatrix { phi }
    }
}

/// Skew-symmetric matrix `[v×]` with `[v×]·w = v × w`.
pub fn cross_matrix(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn state_transition(nu_n: &Vec3, dt: f64) -> Result<TransitionMatrix> {
    if dt < 0.0 || dt.is_nan() {
        return Err(Error::NegativeTimeStep(dt));
    }
    Ok(TransitionMatrix::closed_form(nu_n, dt))
}

/// Propagates an error state forward by `dt` seconds.
pub fn propagate_error(err0: &NavError, nu_n: &Vec3, dt: f64) -> Result<NavError> {
    Ok(state_transition(nu_n, dt)?.apply(err0))
}

fn error_quaternion(dtheta: &Vec3) -> Quaternion<f64> {
    Quaternion::new(1.0, -0.5 * dtheta.x, -0.5 * dtheta.y, -0.5 * dtheta.z)
}

/// Recovers the true state from an estimate and its error:
/// `p = p̂ + δp`, `v = v̂ + δv`, `q = [1; -δθ/2] ⊗ q̂` (renormalized).
pub fn apply_corrections(est: &NavState, err: &NavError) -> NavState {
    let q = error_quaternion(&err.dtheta_n) * est.q_bn;
    NavState {
        p_n: est.p_n + err.dp_n,
        v_n: est.v_n + err.dv_n,
        q_bn: q.normalize(),
        t: est.t,
    }
}

/// Exact inverse of [`apply_corrections`]: the estimate whose correction by
/// `err` yields `truth`.
pub fn remove_corrections(truth: &NavState, err: &NavError) -> NavState {
    let q = error_quaternion(&err.dtheta_n).conjugate() * truth.q_bn;
    NavState {
        p_n: truth.p_n - err.dp_n,
        v_n: truth.v_n - err.dv_n,
        q_bn: q.normalize(),
        t: truth.t,
    }
}

/// The error state at `t` given its value `err_ref` at `t_ref`. Epochs
/// before `t_ref` are reached by backward propagation.
pub fn error_at(err_ref: &NavError, nu_n: &Vec3, t_ref: f64, t: f64) -> NavError {
    TransitionMatrix::closed_form(nu_n, t - t_ref).apply(err_ref)
}

/// Builds the estimated trajectory an INS would report when its error at
/// the first epoch is `err0`.
pub fn corrupt_trajectory(truth: &Trajectory, err0: &NavError) -> Trajectory {
    corrupt_trajectory_about(truth, err0, truth.start_time())
}

/// Like [`corrupt_trajectory`], with the error state specified at the
/// reference epoch `t_ref` instead of the first sample.
pub fn corrupt_trajectory_about(truth: &Trajectory, err_ref: &NavError, t_ref: f64) -> Trajectory {
    let nu = truth.nu_n();
    let samples = truth
        .samples()
        .iter()
        .map(|s| remove_corrections(s, &error_at(err_ref, &nu, t_ref, s.t)))
        .collect();
    Trajectory {
        samples,
        dt: truth.dt(),
        nu_n: nu,
    }
}

/// Straight, level, constant-velocity flight along the AT axis starting
/// above the origin.
pub fn generate_level_trajectory(
    speed: f64,
    altitude: f64,
    duration: f64,
    pulse_rate: f64,
) -> Result<Trajectory> {
    for (name, value) in [
        ("speed", speed),
        ("altitude", altitude),
        ("duration", duration),
        ("pulse_rate", pulse_rate),
    ] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid(name, format!("must be positive, got {value}")));
        }
    }
    let dt = 1.0 / pulse_rate;
    // Tolerate duration·rate landing a hair under an integer.
    let count = (duration * pulse_rate + 1e-9).floor() as usize + 1;
    let velocity = Vec3::new(speed, 0.0, 0.0);
    let samples = (0..count)
        .map(|k| {
            let t = k as f64 * dt;
            NavState {
                p_n: Vec3::new(speed * t, 0.0, -altitude),
                v_n: velocity,
                q_bn: Quaternion::identity(),
                t,
            }
        })
        .collect();
    Trajectory::new(samples, dt, Vec3::new(0.0, 0.0, -STANDARD_GRAVITY))
}
