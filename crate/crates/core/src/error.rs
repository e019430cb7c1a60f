//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument or model setup (bad correlation, dimension mismatch,
    /// rank-deficient design, ...).
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Complete separation detected while fitting a logistic model.
    #[error("complete separation detected in logistic fit (|coefficient| exceeded {bound})")]
    Separation { bound: f64 },

    /// A model fit or estimator could not produce a usable result.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// A treated state with positive probability received a zero score.
    #[error("positivity violation: {0}")]
    Positivity(String),

    /// The chained-equations engine could not complete a replication.
    #[error("imputation failed: {0}")]
    Imputation(String),

    /// A missing-data strategy was not applicable to the given dataset.
    #[error("strategy {strategy} failed: {reason}")]
    StrategyFailure {
        strategy: &'static str,
        reason: String,
    },

    /// Malformed user input (CSV contents, column roles, config files).
    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// CLI exit code: 2 for input problems, 3 for convergence/strategy failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parameter(_)
            | Error::Input(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_) => 2,
            Error::Separation { .. }
            | Error::Estimation(_)
            | Error::Positivity(_)
            | Error::Imputation(_)
            | Error::StrategyFailure { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
