use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("virtual value undefined at {value}: zero density")]
    Singularity { value: f64 },
    #[error("capacity exceeded: {what} ({size} > {limit})")]
    Capacity { what: &'static str, size: usize, limit: usize },
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("buyer price below seller price on item {item}")]
    WbbViolation { item: usize },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("allocation rule rejected: {0}")]
    Construction(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("lp solver: {0}")]
    Lp(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
