use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("evaluation over zero valid pixels")]
    EmptyEvaluation,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite value in {what} at pixel ({x}, {y})")]
    Numeric { what: &'static str, x: usize, y: usize },

    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("incompatible parameters: {0}")]
    Incompatible(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format { offset, message: message.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
