//! Error type shared by every module of the crate.

use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unsupported or invalid format: {0}")]
    Format(String),

    #[error("corrupted data: {0}")]
    Corruption(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("configuration error for `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("episode sampling failed: {0}")]
    Sampling(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by user input (bad config, bad manifest) rather
    /// than by a failure at run time.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
