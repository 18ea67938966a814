//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("matrix is all zeros; condition number undefined")]
    AllZero,

    #[error("matrix dimension {dim} exceeds the supported maximum {max}")]
    TooLarge { dim: usize, max: usize },

    #[error("BN undefined at batch size 1: train-mode batch statistics need N >= 2")]
    BnUndefinedAtBatchSize1,

    #[error("zero-variance column {col} with eps1 = eps2 = 0: scaling undefined")]
    ZeroVarianceColumn { col: usize },

    #[error("convolution kernel size {k} must be odd")]
    EvenKernel { k: usize },

    #[error("backward called without a matching forward pass (stale or missing cache)")]
    StaleCache,

    #[error("{context}: {message} at byte offset {offset}")]
    Parse {
        context: &'static str,
        message: String,
        offset: usize,
    },

    #[error("batch size {requested} exceeds dataset size {available}")]
    BatchTooLarge { requested: usize, available: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
