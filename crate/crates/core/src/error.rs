use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("grid needs an even sample count of at least 8, got {0}")]
    BadCount(usize),
    #[error("grid length must be positive and finite, got {0}")]
    BadLength(f64),
    #[error("field has {got} samples but the grid has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },
    #[error("derivative order must be at least 1")]
    BadOrder,
    #[error("lefton profiles need b < -1, got b = {0}")]
    NotLeftonRegime(f64),
    #[error("amplitude must be positive, got {0}")]
    BadAmplitude(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("momentum density must be positive; minimum sample {min:e} at index {index}")]
    NonPositive { min: f64, index: usize },
    #[error("positivity guard breached at t = {time}: minimum {min:e}")]
    PositivityBreach { time: f64, min: f64 },
    #[error("solution blew up at t = {time}: norm {norm:e} above ceiling")]
    BlowUp { time: f64, norm: f64 },
    #[error("weight window half-width {window} exceeds the overflow-safe bound {limit}")]
    WindowOverflow { window: f64, limit: f64 },
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("constrained Gram matrix is not positive definite")]
    IndefiniteGram,
    #[error("modulation Newton iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("state is outside the modulation neighbourhood: {0}")]
    OutOfNeighbourhood(String),
    #[error("snapshot stride too coarse: {0}")]
    StrideTooCoarse(String),
    #[error("trajectory has too few snapshots ({0})")]
    TooFewSnapshots(usize),
}

pub type Result<T> = std::result::Result<T, Error>;
