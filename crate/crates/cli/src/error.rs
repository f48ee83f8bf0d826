use thiserror::Error;

/// Process exit status of every command.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum ExitStatus {
    Success = 0,
    /// bad flags, unreadable or invalid configuration
    Usage = 1,
    /// missing, malformed or inconsistent input data
    Data = 2,
    /// degenerate motion, solver failure or lost tracking
    Numerical = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn status(&self) -> ExitStatus {
        match self {
            CliError::Usage(_) => ExitStatus::Usage,
            CliError::Data(_) => ExitStatus::Data,
            CliError::Numerical(_) => ExitStatus::Numerical,
        }
    }
}

impl From<vislam::Error> for CliError {
    fn from(e: vislam::Error) -> Self {
        use vislam::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) | E::InvalidModel(_) => CliError::Usage(msg),
            E::InvalidInput(_) | E::InsufficientData(_) | E::Parse { .. } | E::Io { .. } => CliError::Data(msg),
            E::DegenerateMotion { .. }
            | E::RankDeficient(_)
            | E::NumericalFailure(_)
            | E::TrackingLost { .. }
            | E::BehindCamera { .. } => CliError::Numerical(msg),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
