use std::path::PathBuf;

use thiserror::Error;

/// Failures of the command-line layer, each with a fixed exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid data: {0}")]
    Data(shift_core::Error),

    #[error("numerical failure: {0}")]
    Numerical(shift_core::Error),

    #[error("self-check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Check(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } | CliError::Data(_) => 4,
        }
    }

    /// Stable machine-readable tag used in the structured log.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Format { .. } => "format",
            CliError::Data(_) => "data",
            CliError::Numerical(_) => "numerical",
            CliError::Check(_) => "check",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

impl From<shift_core::Error> for CliError {
    fn from(e: shift_core::Error) -> Self {
        match e {
            shift_core::Error::Config(m) => CliError::Config(m),
            e if e.is_numerical() => CliError::Numerical(e),
            e => CliError::Data(e),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
