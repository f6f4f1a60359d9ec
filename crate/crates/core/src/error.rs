use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value broke a documented invariant.
    #[error("invalid: {0}")]
    Invalid(String),

    /// The caller violated an operation's precondition.
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {0}")]
    Config(String),

    /// A record in a line-delimited file failed to decode or validate.
    #[error("{path}:{line}: {message}")]
    Schema { path: String, line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
