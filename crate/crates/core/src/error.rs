use thiserror::Error;

use crate::variational::VariationalFamily;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not positive definite (Cholesky factorization failed)")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric: max |A_ij - A_ji| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite ELBO at iteration {iteration} after {retries} step-size halvings")]
    NonFiniteElbo {
        iteration: usize,
        retries: usize,
        iterate: Box<VariationalFamily>,
    },

    #[error("every candidate rank failed to fit: {0}")]
    AllFitsFailed(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
