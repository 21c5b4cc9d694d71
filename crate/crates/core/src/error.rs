use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum HoijError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },
    #[error("non-finite value {value} at row {row}, column {column}")]
    NonFinite { row: usize, column: usize, value: f64 },
    #[error("dataset has no rows")]
    NoRows,
    #[error("row {row} has {found} features, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("order {order} exceeds the maximum supported order {max}")]
    OrderTooLarge { order: usize, max: usize },
    #[error("non-finite value encountered while evaluating {0}")]
    NonFiniteEvaluation(String),
    #[error("solver did not converge in {iterations} iterations (|G| = {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(
        "Hessian is numerically singular (reciprocal condition {rcond:e}) at theta = {theta:?}; \
         the estimating equation must have a strongly positive definite Jacobian"
    )]
    SingularHessian { rcond: f64, theta: Vec<f64> },
    #[error("derivative of order {0} has not been computed yet")]
    MissingDerivative(usize),
    #[error("term table exceeded the cap of {cap} terms at order {order}")]
    TermTableTooLarge { order: usize, cap: usize },
    #[error("condition on the set complexity fails: C_set = {c_set} > rho = {rho}")]
    ConditionNotSatisfied { c_set: f64, rho: f64 },
}

pub type Result<T, E = HoijError> = std::result::Result<T, E>;
