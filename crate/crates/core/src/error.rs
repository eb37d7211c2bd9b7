use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid contraction order {r} for kernels of order {q1} and {q2}")]
    InvalidOrder { r: usize, q1: usize, q2: usize },
    #[error("kernel not symmetric: max deviation {deviation:e}")]
    NotSymmetric { deviation: f64 },
    #[error("matrix not positive definite: smallest eigenvalue {min_eigenvalue:e}")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("{what} would hold {entries} entries, limit is {limit}")]
    TooLarge {
        what: &'static str,
        entries: u128,
        limit: usize,
    },
    #[error("chaos order {order} exceeds supported maximum {max}")]
    UnsupportedOrder { order: usize, max: usize },
    #[error("expected a single multiple integral")]
    NonPure,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
