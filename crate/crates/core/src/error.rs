use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid partition: {0}")]
    Partition(String),

    #[error("invalid noise model: {0}")]
    NoiseModel(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("consistency set unbounded or degenerate: {0}")]
    DegenerateSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed structure: {0}")]
    Structure(String),

    #[error("conic solver failure: {0}")]
    Solver(String),

    #[error("cannot initialize: data not informative ({0})")]
    NotInformative(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
