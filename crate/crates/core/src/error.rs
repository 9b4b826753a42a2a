use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an ordering or bookkeeping contract.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A numerical routine failed where it should not be able to.
    #[error("internal numerical error: {0}")]
    Internal(String),
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
