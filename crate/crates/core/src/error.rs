use thiserror::Error;

/// Errors raised anywhere in the simulation, analysis and dataset pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("time step must be non-negative, got {0}")]
    NegativeTimeStep(f64),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("navigation error component is not finite")]
    NonFiniteError,

    #[error("attitude error {magnitude} rad leaves the small-angle regime (limit {limit} rad)")]
    AttitudeTooLarge { magnitude: f64, limit: f64 },

    #[error("target {target} at range {range:.3} m is outside the range window for pulse {pulse}")]
    TargetOutOfWindow { pulse: usize, target: usize, range: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no reliable registration (peak correlation {peak_correlation:.3})")]
    NoRegistration { peak_correlation: f64 },

    #[error("image has zero energy")]
    ZeroEnergy,

    #[error("degenerate image: zero variance after log transform")]
    DegenerateImage,

    #[error("label component {component} has zero variance")]
    ZeroVariance { component: usize },

    #[error("need at least {needed} {what}, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("sample {index} (target {target_id}): {source}")]
    Sample {
        index: usize,
        target_id: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
