use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration or argument violated a documented precondition.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Covariate width does not match the width a model was fitted with.
    #[error("covariate width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },

    /// A statistic with a zero standard deviation; callers decide how to react
    /// (the tree search treats it as a rejected split).
    #[error("degenerate statistic: standard deviation is zero")]
    DegenerateStatistic,

    /// Empirical propensity requested but the data contains a single arm.
    #[error("single-arm dataset: empirical propensity undefined")]
    SingleArm,

    /// Every cell has nonpositive mean pseudo-outcome; no subset can have a
    /// positive objective. Callers emit the null policy.
    #[error("no cell with positive mean pseudo-outcome")]
    NoPositiveCell,

    /// CSV ingestion failure with the offending location when known.
    #[error("csv error: {0}")]
    Csv(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A method failed inside an experiment replication.
    #[error("method {method} failed in replication {replication}: {message}")]
    MethodFailed {
        method: String,
        replication: usize,
        message: String,
    },
}
