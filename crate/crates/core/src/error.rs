use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the tensor engine, models, pruner and loaders.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("model spec error: {0}")]
    Spec(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("format error in {path} at byte {offset}: {msg}")]
    Format { path: PathBuf, offset: u64, msg: String },
    #[error("compaction error: {0}")]
    Compaction(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use shape_err;
