//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("lambda = infinity is not valid here; fit_erm handles the infinite-penalty case")]
    InfiniteLambda,

    #[error("regularizer is not smooth; use the proximal or support-restricted variants")]
    NonSmoothRegularizer,

    #[error("regularizer has no proximal operator implementation")]
    NotProxCapable,

    #[error("{context}: matrix is singular or indefinite (smallest eigenvalue {min_eig:.3e})")]
    SingularMatrix { context: String, min_eig: f64 },

    #[error("{context}: did not converge within {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        context: String,
        residual: f64,
        iterations: usize,
    },

    #[error("fold {fold} fit failed: {source}")]
    FoldFitFailed {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("missing moment estimate M_({s},{r}) required by {needed_by}")]
    MissingMoment { s: u32, r: u32, needed_by: String },

    #[error("invalid constants: {0}")]
    BadConstants(String),

    #[error("bounds are not evaluable for this model: {0}")]
    BoundsNotEvaluable(String),

    #[error("invalid fold scheme: {0}")]
    InvalidFolds(String),

    #[error("invalid counterexample parameters: {0}")]
    InvalidCase(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
