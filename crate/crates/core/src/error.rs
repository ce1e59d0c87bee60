//! Error type shared across the crate.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed on-disk data: bad magic, wrong version, truncation, unparsable sidecars.
    #[error("format error: {0}")]
    Format(String),

    /// Data that parses but violates an invariant (NaN values, duplicate ids, shape mismatch).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Bad arguments or configuration (out-of-range step, unknown config keys, k > N).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numerical failure during computation (non-finite loss or gradient).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(format!("csv: {e}"))
    }
}

impl Error {
    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn invalid_data(msg: impl Into<String>) -> Self {
        Error::InvalidData(msg.into())
    }

    pub(crate) fn invalid_argument(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
