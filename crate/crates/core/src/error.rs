use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid feature spec: {0}")]
    InvalidFeatureSpec(String),

    #[error("column `{0}` not found")]
    MissingColumn(String),

    #[error("feature arity mismatch: model expects {expected} columns, got {found}")]
    ArityMismatch { expected: usize, found: usize },

    #[error("perfect separation: {0}")]
    Separation(String),

    #[error("no usable days for estimation (t0 = {t0})")]
    EmptyDaySet { t0: usize },

    #[error("at least {needed} studies are required, got {found}")]
    TooFewStudies { needed: usize, found: usize },

    #[error("delta grids differ between curves: {0}")]
    GridMismatch(String),

    #[error("all base learners failed: {0}")]
    AllLearnersFailed(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
