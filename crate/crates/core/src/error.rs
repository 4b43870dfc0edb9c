use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, widths or hyper-parameters that cannot be wired together.
    #[error("configuration error: {0}")]
    Config(String),
    /// An API called in a way its contract forbids.
    #[error("usage error: {0}")]
    Usage(String),
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    /// A loss or gradient left the finite range.
    #[error("numerical abort: {0}")]
    NonFinite(String),
    #[error("gradient check failed: {0}")]
    Oracle(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => { $crate::error::Error::Config(format!($($arg)*)) };
}
pub(crate) use config_err;
