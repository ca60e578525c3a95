use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or configuration values that cannot work together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric operation left its domain or produced a non-finite value.
    #[error("numeric error in {op}: {detail}")]
    Numeric { op: String, detail: String },

    #[error("usage error: {0}")]
    Usage(String),

    /// Data values outside the accepted range (e.g. non-binary pixels).
    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("data generation error: {0}")]
    Generation(String),

    /// A numeric failure during training; `last_good` is the state at the
    /// start of the failing epoch.
    #[error("training diverged in epoch {epoch}: {source}")]
    Diverged {
        epoch: usize,
        source: Box<Error>,
        last_good: Box<crate::trainer::Checkpoint>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numeric(op: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            op: op.into(),
            detail: detail.into(),
        }
    }
}
