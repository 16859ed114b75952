use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inputs that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("format error in {}: {reason}", file.display())]
    Format { file: PathBuf, reason: String },

    #[error("io error on {}: {source}", file.display())]
    Io {
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A message or aggregation that breaks the round protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("similarity error: {0}")]
    Similarity(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("numerical error: {0}")]
    NonFinite(String),
}
