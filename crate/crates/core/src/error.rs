use thiserror::Error;

/// Errors raised by model construction, inference and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("indexing error: {0}")]
    Index(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("joint state count {states} exceeds the configured cap {cap}")]
    Size { states: u128, cap: u128 },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
