use thiserror::Error;

/// Crate-wide error type. Report-valued checks (validation, criterion
/// checkers) do not use this; they return their findings as data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("selection kernel is not in additive form")]
    NotAdditive,

    #[error("lambda depends on mu: max deviation {max_dev:e} across probe measures")]
    MuDependentLambda { max_dev: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    SizeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid rate matrix: {0}")]
    InvalidRateMatrix(String),

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("configuration simplex has {states} states, exceeding the cap of {cap}")]
    SimplexTooLarge { states: usize, cap: usize },

    #[error("event cap of {cap} exceeded at simulation time {time}")]
    EventCapExceeded { cap: u64, time: f64 },

    #[error("population size must be positive")]
    EmptyPopulation,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("flow does not cover the request: {0}")]
    FlowRange(String),

    #[error("dominant eigenvalue is not simple within tolerance: spectral gap estimate {gap:e}")]
    EigenNotSimple { gap: f64 },

    #[error("eigenvector violates sign structure: {0}")]
    SignStructure(String),

    #[error("h-transform requires strictly positive h (min entry {min:e})")]
    NonPositiveH { min: f64 },

    #[error("integrand does not decay over the probed horizon: {0}")]
    NonDecayingIntegrand(String),

    #[error("flows differ beyond tolerance (sup TV {sup_tv:e}); the transform must preserve the limit")]
    FlowMismatch { sup_tv: f64 },

    #[error("kernel expression error: {0}")]
    Expr(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
