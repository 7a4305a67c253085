use thiserror::Error;

use crate::unlearner::RunTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("invalid quantization spec: {0}")]
    InvalidQuantSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty batch or dataset: {0}")]
    Empty(&'static str),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Data(String),

    #[error("training diverged at step {step} ({method})")]
    Diverged {
        step: usize,
        method: String,
        trace: Box<RunTrace>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
