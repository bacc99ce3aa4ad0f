use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("input outside the valid domain: {0}")]
    InputDomain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("sampler exhausted {calls} likelihood calls without exceeding threshold {threshold}")]
    Exhausted { threshold: f64, calls: u64 },

    #[error("slice shrinkage failed to find a point inside the contour at threshold {threshold}")]
    NumericalContour { threshold: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("incompatible runs: {0}")]
    Incompatible(String),

    #[error("posterior undefined: {0}")]
    UndefinedPosterior(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),
}
