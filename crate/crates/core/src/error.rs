use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DrError>;

#[derive(Debug, Error)]
pub enum DrError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in tensor {tensor} at index {index}: {value}")]
    NonFinite {
        tensor: usize,
        index: usize,
        value: f64,
    },

    #[error("internal consistency violated: {0}")]
    Consistency(String),

    #[error("checkpoint corrupted at {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("checkpoint format version {found} cannot be read (expected {expected})")]
    Migration { found: u32, expected: u32 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl DrError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        DrError::Shape(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        DrError::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        DrError::Config(msg.into())
    }
}
