use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported theta grid scheme `{0}` (expected `gauss-hermite` or `uniform-truncated`)")]
    UnsupportedScheme(String),

    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),

    /// A numerical invariant that should hold by construction was violated.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("brute-force enumeration too large: {count} candidate quantizers (limit {limit})")]
    EnumerationTooLarge { count: f64, limit: f64 },

    #[error("index {index} out of range for grid with {len} nodes")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
