use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("bound error: {0}")]
    Bound(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid shared-component spec: {0}")]
    Spec(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("archive too small: need at least {need} records, have {have}")]
    Size { need: usize, have: usize },

    #[error("gaussian process fit failed: {0}")]
    Fit(String),

    #[error("non-finite training loss at step {step} (t = {task:?}, lambda = {preference:?})")]
    NonFiniteLoss {
        step: usize,
        task: Vec<f64>,
        preference: Vec<f64>,
    },

    #[error("evaluation budget exhausted")]
    BudgetExhausted,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
