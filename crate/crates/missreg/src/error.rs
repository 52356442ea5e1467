use thiserror::Error;

/// Errors produced by data ingestion, estimation and tuning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("response column {index} has no observed entries")]
    AllMissingColumn { index: usize },

    #[error("design matrix column {index} is constant; cannot normalize")]
    ConstantColumn { index: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("missing probability out of range for column {index}: {value}")]
    InvalidRho { index: usize, value: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: could not parse cell `{cell}`")]
    ParseCell {
        path: String,
        line: usize,
        cell: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("line-search step size underflow at iteration {iteration} (step {step:.3e})")]
    StepUnderflow { iteration: usize, step: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("in response column {column}: {source}")]
    InColumn {
        column: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at grid point (lambda_theta={lambda_theta:.6e}, lambda_b={lambda_b:.6e}): {source}")]
    AtGridPoint {
        lambda_theta: f64,
        lambda_b: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("cross-validation fold {fold} has an all-missing response column {column}")]
    BadFold { fold: usize, column: usize },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
}

impl Error {
    pub(crate) fn in_column(column: usize, source: Error) -> Self {
        Error::InColumn {
            column,
            source: Box::new(source),
        }
    }

    pub(crate) fn at_grid_point(lambda_theta: f64, lambda_b: f64, source: Error) -> Self {
        Error::AtGridPoint {
            lambda_theta,
            lambda_b,
            source: Box::new(source),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
