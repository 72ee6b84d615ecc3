use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    pub fn at(path: &Path, line: u64, msg: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}:{line}: {msg}", path.display()))
    }
}

impl From<poolcal::Error> for CliError {
    fn from(e: poolcal::Error) -> Self {
        use poolcal::Error as E;
        match e {
            E::InvalidParameter(_) => CliError::Usage(e.to_string()),
            E::TrainingDiverged { .. } | E::MembersDiverged(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
