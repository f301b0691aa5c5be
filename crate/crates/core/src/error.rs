use std::io;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("event out of bounds at index {index}: {detail}")]
    EventOutOfBounds { index: usize, detail: String },

    #[error("bad magic number in event file")]
    BadMagic,

    #[error("unsupported file version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated record: {0}")]
    Truncated(String),

    #[error("timestamps not sorted at record {index}")]
    UnsortedTimestamps { index: usize },

    #[error("backward already run on this graph")]
    BackwardTwice,

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("membrane state shape changed without reset: expected {expected:?}, got {got:?}")]
    StateShape { expected: Vec<usize>, got: Vec<usize> },

    #[error("no forward pass has been recorded")]
    NoForwardPass,

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
