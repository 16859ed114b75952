use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or arguments; nothing was run or written.
    #[error("{0}")]
    Validation(String),

    #[error("config {origin}, line {line}, key '{key}': {message}")]
    ConfigKey {
        origin: String,
        line: usize,
        key: String,
        message: String,
    },

    #[error("comparison error: {0}")]
    Compare(String),

    #[error(transparent)]
    Core(#[from] svote_core::Error),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for validation failures, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::ConfigKey { .. } | CliError::Compare(_) => 1,
            CliError::Core(_) | CliError::Io { .. } => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
