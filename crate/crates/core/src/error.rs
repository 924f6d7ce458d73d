use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("{what} is not symmetric positive-definite")]
    NotPositiveDefinite { what: &'static str },

    #[error("drift matrix is not Hurwitz (pump at or above threshold)")]
    NotHurwitz,

    #[error("time step too coarse: dt*rate = {product:.3e} exceeds {limit}")]
    UnstableStep { product: f64, limit: f64 },

    #[error("{equation} did not reach steady state after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        equation: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("length mismatch: expected {expected} samples, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error(
        "smoothing combination matrix is numerically singular (condition number {condition:.3e})"
    )]
    SingularCombination { condition: f64 },

    #[error(
        "inconsistent covariances: det(V_T) = {det_true:.6e} exceeds det(V_C) = {det_cond:.6e}"
    )]
    InconsistentCovariances { det_true: f64, det_cond: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("empty sample set")]
    EmptySample,

    #[error("malformed input: {0}")]
    Format(String),

    #[error("cell {coords}: {source}")]
    Cell {
        coords: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Self {
        Error::InvalidParameter {
            name,
            value,
            reason,
        }
    }
}
