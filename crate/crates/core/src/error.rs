use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the model, analytic and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violated one of the model invariants. The message names the
    /// violated requirement, e.g. "requires R > r".
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The closed form is singular at this parameter point (no reverse-lane
    /// traffic means no reverse-lane head can ever stop the beacon).
    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("budget too small: {0}")]
    UnderBudget(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
