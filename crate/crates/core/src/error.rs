use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid rate field: {0}")]
    InvalidField(String),

    #[error("rate field value {value} at {location} is outside [{lower}, {upper}]")]
    BoundViolation {
        value: f64,
        lower: f64,
        upper: f64,
        location: String,
    },

    #[error("non-finite argument: {0}")]
    NonFinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rejection sampler gave up after {attempts} attempts")]
    SamplerExhausted { attempts: usize },

    #[error("lattice sum needs {needed} images per axis, limit is {limit}")]
    CutoffOverflow { needed: usize, limit: usize },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("tilt is outside the principal-eigenvalue region; the gradient is not defined there")]
    OutsideGamma,

    #[error("ill-conditioned solve (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("Legendre search radius exceeded {radius}")]
    SearchRadiusOverflow { radius: f64 },

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub(crate) fn check_finite(label: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{label} = {values:?}")))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
