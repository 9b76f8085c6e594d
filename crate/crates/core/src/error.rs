use thiserror::Error;

/// Errors raised by the sampling, fitting, monitoring and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("design matrix is rank deficient at feature column {column} (of {columns})")]
    RankDeficient { column: usize, columns: usize },

    #[error("degenerate batch: residual sample variance is zero")]
    DegenerateBatch,

    #[error("exploration made no progress: {accepted} of {requested} cells accepted after {attempts} proposals")]
    ProgressFailure {
        accepted: usize,
        requested: usize,
        attempts: usize,
    },

    #[error("calibration failed: {reason}")]
    Calibration { reason: String, trace: Vec<String> },

    #[error("unstable configuration: {censored} of {total} runs censored at the horizon")]
    Unstable { censored: usize, total: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
