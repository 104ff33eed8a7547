use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("row {row} is not stochastic (sum = {sum})")]
    NotStochastic { row: usize, sum: f64 },

    #[error("negative transition probability {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("transition matrix is reducible (state {state} cannot reach every other state)")]
    Reducible { state: usize },

    #[error("iteration did not converge after {iterations} steps (last residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("singular linear system (pivot {pivot:e} in column {column})")]
    Singular { column: usize, pivot: f64 },

    #[error("forcing function is not centered (stationary mean {mean:e})")]
    UncenteredForcing { mean: f64 },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("evaluation point {0} is too close to a pole")]
    PoleProximity(String),

    #[error("enumeration too large: {paths} paths exceed the limit of {limit}")]
    EnumerationTooLarge { paths: u128, limit: u128 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("configuration error: {0}")]
    Configuration(String),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
