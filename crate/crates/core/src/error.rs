use thiserror::Error;

/// Errors raised by samplers, estimators and the experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },

    #[error("rank-one downdate would make the Gram matrix singular (x'A^-1 x = {leverage})")]
    SingularDowndate { leverage: f64 },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point is not in the support of the labelled distribution")]
    UnlabeledPoint,

    #[error("closed form unavailable: {0}")]
    Unavailable(String),

    #[error("covariance matrix is singular")]
    SingularCovariance,

    #[error("distribution has unbounded support")]
    UnboundedSupport,

    #[error("distribution carries no support bound K")]
    MissingSupportBound,

    #[error("subset has size {actual}, expected {expected}")]
    BadSubsetSize { expected: usize, actual: usize },

    #[error("Gram matrix of the point set is singular")]
    SingularGram,

    #[error("enumeration of {count} subsets exceeds the limit of {limit}")]
    TooLarge { count: u128, limit: u128 },

    #[error("removal probability {value:e} is negative beyond roundoff")]
    NegativeProbability { value: f64 },

    #[error("leverage {observed} exceeds the bound K = {bound}")]
    LeverageBoundViolated { observed: f64, bound: f64 },

    #[error("rejection sampler exceeded {0} restarts")]
    RestartBudgetExceeded(usize),

    #[error("batch determinant ratio {0} exceeds 1")]
    DeterminantBoundViolated(f64),

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
