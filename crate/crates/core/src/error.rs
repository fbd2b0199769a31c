use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{what} is outside the admissible domain: {value}")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("solver failed at xi = {xi}: {reason}")]
    Solver { xi: f64, reason: String },

    #[error("policy and risk scheme do not match: {0}")]
    SchemeMismatch(String),

    #[error("malformed table: {0}")]
    Table(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
