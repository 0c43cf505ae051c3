use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller passed arguments that do not fit the receiving structure
    /// (wrong lengths, malformed states, out-of-range indices).
    #[error("usage error: {0}")]
    Usage(String),

    /// Numeric input outside the function's domain (NaN, negative probability).
    #[error("invalid input: {0}")]
    Input(String),

    /// A documented precondition did not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("environment construction failed: {0}")]
    Construction(String),

    #[error("gateway: {0}")]
    Gateway(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
