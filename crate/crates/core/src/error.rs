use std::io;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum IleError {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    Numeric(String),

    #[error("singular system in {0}")]
    Singular(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing required config key `{0}`")]
    MissingKey(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, IleError>;

pub(crate) fn dim_err(op: &'static str, detail: impl Into<String>) -> IleError {
    IleError::Dimension {
        op,
        detail: detail.into(),
    }
}
