use thiserror::Error;

/// Errors raised by model construction, simulation and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("contract factor index {index} out of range 1..={max}")]
    FactorIndex { index: usize, max: usize },

    #[error("maturity index {index} out of range 1..={max}")]
    MaturityIndex { index: usize, max: usize },

    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("covariance of projected block {block} is not positive definite")]
    NotPositiveDefinite { block: usize },

    #[error("model has no transition density for block {0} (degenerate covariance)")]
    NoDensity(usize),

    #[error("maturities must be nonempty, positive and strictly increasing")]
    BadMaturities,

    #[error("invalid grid: {0}")]
    BadGrid(String),

    #[error("mesh requires t < T_k, got t = {t}, T_k = {maturity}")]
    NotBeforeMaturity { t: f64, maturity: f64 },

    #[error("time {0} is not a point of the partition")]
    NotOnGrid(f64),

    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MeshError {
    fn from(e: std::io::Error) -> Self {
        MeshError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MeshError>;

pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> MeshError {
    MeshError::Parameter {
        name,
        reason: reason.into(),
    }
}
