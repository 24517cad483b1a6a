use thiserror::Error;

/// Errors raised by the fitting, prediction and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent input (shapes, non-finite values, bad ranges).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid hyperparameter combination.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A design matrix or coordinate set lacks the rank the method needs.
    #[error("rank error: {0}")]
    Rank(String),

    /// A factorization or eigensolver failed to produce a usable result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed data file.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}
