use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is not symmetric (relative asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("{0} is not positive definite")]
    NotPositiveDefinite(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("invalid sparsity pattern: {0}")]
    InvalidPattern(String),

    #[error("weight {0} outside [0, 1]")]
    OmegaOutOfRange(f64),

    #[error("covariance of {which} is not block-diagonal for the partition (cross-block magnitude {magnitude:.3e})")]
    NotBlockDiagonal { which: String, magnitude: f64 },

    #[error("label mismatch: {0}")]
    LabelMismatch(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error(
        "sampler exhausted its budget of {budget} proposals with {free} free cross entries; \
         marginals may be near-degenerate or the free block too large"
    )]
    RetryBudgetExhausted { budget: u64, free: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("malformed estimate file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, FusionError>;
