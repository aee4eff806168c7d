use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("decode error in {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("manifest {path}, row {row}: {reason}")]
    Load {
        path: PathBuf,
        row: usize,
        reason: String,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("{0}")]
    Failed(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from invalid user input rather than a failure
    /// while doing the work. The CLI maps these to exit code 1.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Usage(_)
                | Error::Input(_)
                | Error::Load { .. }
                | Error::Precondition(_)
        )
    }
}
