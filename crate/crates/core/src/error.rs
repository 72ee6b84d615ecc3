use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("missing validation set: {0}")]
    MissingValidation(&'static str),

    #[error("training diverged at step {step} (loss = {loss})")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("training diverged for {}", .0.join(", "))]
    MembersDiverged(Vec<String>),
}

pub type Result<T> = std::result::Result<T, Error>;
