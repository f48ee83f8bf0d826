use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The motion does not excite every unknown of a linear/nonlinear solve.
    /// Carries the condition number of the offending system when one exists.
    #[error("degenerate motion: {reason} (condition number {condition_number:.3e})")]
    DegenerateMotion { reason: String, condition_number: f64 },

    /// A point configuration does not determine the requested transform.
    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("point behind camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },

    #[error("tracking lost at t={timestamp:.6} s: {usable} usable observations")]
    TrackingLost { timestamp: f64, usable: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid trajectory model: {0}")]
    InvalidModel(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
