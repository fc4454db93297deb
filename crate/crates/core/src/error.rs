use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint action {action} is not feasible: {reason}")]
    InfeasibleAction { action: String, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("enumeration limit of {limit} nodes exceeded")]
    BudgetExceeded { limit: usize },
    #[error("protocol aborted at step {step}: {reason}")]
    Protocol { step: usize, reason: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
