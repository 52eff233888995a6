//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors reported by the library.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An array or image does not have the shape an operation requires.
    ShapeMismatch {
        what: &'static str,
        expected: String,
        got: String,
    },
    /// A configuration value is outside its valid range.
    InvalidConfig { what: &'static str, message: String },
    /// A numeric computation produced a non-finite value.
    NonFinite { what: &'static str, step: Option<usize> },
    /// The backtracking step size underflowed; the objective is not smooth
    /// enough at the current iterate.
    StepUnderflow { iteration: usize, alpha: f64 },
    /// A binary file could not be parsed. `offset` is the byte position at
    /// which the problem was detected.
    Parse { offset: u64, message: String },
    /// Wrapper around I/O failures.
    Io(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { what, expected, got } => {
                write!(f, "{what}: expected {expected}, got {got}")
            }
            Error::InvalidConfig { what, message } => write!(f, "invalid {what}: {message}"),
            Error::NonFinite { what, step: Some(k) } => {
                write!(f, "non-finite {what} at step {k}")
            }
            Error::NonFinite { what, step: None } => write!(f, "non-finite {what}"),
            Error::StepUnderflow { iteration, alpha } => write!(
                f,
                "backtracking step size underflowed (alpha = {alpha:.3e}) at iteration {iteration}"
            ),
            Error::Parse { offset, message } => {
                write!(f, "parse error at byte {offset}: {message}")
            }
            Error::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn shape(what: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::ShapeMismatch {
            what,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn config(what: &'static str, message: impl ToString) -> Self {
        Error::InvalidConfig { what, message: message.to_string() }
    }
}
