use std::path::PathBuf;

use thiserror::Error;

/// Errors raised while loading designs, evaluating the model, sampling or
/// writing reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid blueprint: {0}")]
    Blueprint(String),

    #[error("invalid ratings (row {row}): {message}")]
    Ratings { row: usize, message: String },

    #[error("invalid parameters: {0}")]
    Params(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("dimension mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
