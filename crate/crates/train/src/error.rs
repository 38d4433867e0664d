use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] dekan_data::DataError),

    #[error("dataset contains no samples")]
    EmptyDataset,

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(#[from] CheckpointError),

    /// A NaN or infinity in a loss or gradient.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Model(dekan_core::Error),
}

impl From<dekan_core::Error> for TrainError {
    fn from(e: dekan_core::Error) -> Self {
        match e {
            dekan_core::Error::Config(msg) => TrainError::Config(msg),
            dekan_core::Error::NonFinite(msg) => TrainError::Numerical(msg),
            other => TrainError::Model(other),
        }
    }
}

impl TrainError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        TrainError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Process exit code: 1 configuration, 2 data or I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::Config(_) => 1,
            TrainError::Data(dekan_data::DataError::Config(_)) => 1,
            TrainError::Numerical(_) => 3,
            TrainError::EmptyDataset
            | TrainError::Data(_)
            | TrainError::Io { .. }
            | TrainError::Checkpoint(_)
            | TrainError::Model(_) => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,

    #[error("unsupported checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("shape mismatch for `{name}`: stored {stored:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: [usize; 4],
        expected: [usize; 4],
    },

    #[error("parameter `{0}` missing from checkpoint")]
    MissingParameter(String),

    #[error("unexpected parameter `{0}` in checkpoint")]
    UnexpectedParameter(String),

    #[error("invalid checkpoint contents: {0}")]
    Malformed(String),
}
