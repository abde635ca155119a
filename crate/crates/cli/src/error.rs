use std::path::PathBuf;

use thiserror::Error;

/// Every problem found in a config, one message per entry.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", errors.join("\n"))]
pub struct ConfigError {
    pub errors: Vec<String>,
}

impl ConfigError {
    pub fn single(message: String) -> Self {
        ConfigError { errors: vec![message] }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config:\n{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
    #[error("{failed} of {total} cells failed")]
    PartialFailure { failed: usize, total: usize },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    pub fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> CliError {
        CliError::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code: 1 validation, 2 runtime, 3 partial sweep failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } | CliError::Schema { .. } | CliError::Runtime(_) => 2,
            CliError::PartialFailure { .. } => 3,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Runtime(format!("csv: {e}"))
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
