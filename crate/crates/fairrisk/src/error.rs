use std::path::PathBuf;

use thiserror::Error;

/// Process exit code for invalid configuration or input data.
pub const EXIT_VALIDATION: i32 = 2;
/// Process exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Core(#[from] fairrisk_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
