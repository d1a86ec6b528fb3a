use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("incompatible batches: {0}")]
    IncompatibleBatches(String),

    #[error("infeasible constraint: xi = {xi} exceeds the largest attainable index variance {max}")]
    InfeasibleConstraint { xi: f64, max: f64 },

    #[error("invalid density: {0}")]
    InvalidDensity(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
