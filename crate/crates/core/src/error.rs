use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "degenerate segmentation: requested {requested} segments, only {achievable} achievable"
    )]
    DegenerateSegmentation { requested: usize, achievable: usize },

    #[error("missing value for attribute `{0}`")]
    MissingValue(String),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("table directory {0} already exists and is not empty")]
    AlreadyExists(PathBuf),

    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },

    #[error("confidence {0} out of range (0, 1]")]
    ConfidenceRange(f64),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("storage error at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("storage corruption at {path}: {msg}")]
    Corruption { path: PathBuf, msg: String },

    #[error("malformed input: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn storage(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Storage {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corruption(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Corruption {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by the caller (bad query, bad config, bad input)
    /// rather than by the storage layer.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Storage { .. } | Error::Corruption { .. })
    }
}
