use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate covariance: condition number {condition:.3e}")]
    DegenerateCovariance { condition: f64 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("sampling error: part {part} has no eligible {kind} samples")]
    Sampling { part: String, kind: &'static str },

    #[error("non-finite {parameter} gradient at point {point}, iteration {iteration}")]
    NonFiniteGradient {
        parameter: &'static str,
        point: usize,
        iteration: usize,
    },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn parse_line(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("line {line}"),
            message: message.into(),
        }
    }

    pub(crate) fn parse_offset(offset: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: format!("byte offset {offset}"),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category, used by the CLI's single-line errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid-input",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::DegenerateCovariance { .. } => "degenerate-covariance",
            Error::Validation(_) => "validation",
            Error::Parse { .. } => "parse",
            Error::Sampling { .. } => "sampling",
            Error::NonFiniteGradient { .. } => "non-finite-gradient",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }
}
