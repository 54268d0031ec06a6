use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in component {index} ({context})")]
    NonFinite { index: usize, context: String },

    #[error("invalid argument: {0}")]
    Usage(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },

    #[error("step size underflow at t = {t_last} (h = {step:e})")]
    StepUnderflow { t_last: f64, step: f64 },

    #[error("integration failed at t = {t_last}: {reason}")]
    Integration { t_last: f64, reason: String },

    #[error("{0}")]
    EmptySet(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
