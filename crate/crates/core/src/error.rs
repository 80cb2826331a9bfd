//! Error type shared by every module in the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The requested design cannot be realized (e.g. the implied treatment
    /// rate falls outside (0,1), or a zero lift was requested).
    #[error("infeasible design: {0}")]
    Infeasible(String),

    /// Too few observations to compute the requested statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Inputs that must agree in length or structure do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid input data; carries a line number when file-based.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}
