use thiserror::Error;

pub type Result<T> = std::result::Result<T, RuvError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuvError {
    #[error("design matrix is rank deficient (column {column}, |r_ii| = {magnitude:e})")]
    RankDeficiency { column: usize, magnitude: f64 },

    #[error("need more samples than covariates (n = {n}, k = {k})")]
    InsufficientSamples { n: usize, k: usize },

    #[error("zero residual degrees of freedom: {context}")]
    ZeroDof { context: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("requested rank {q} is not supported by data of shape {rows}x{cols}: {reason}")]
    Rank {
        q: usize,
        rows: usize,
        cols: usize,
        reason: String,
    },

    #[error("control loading Gram matrix is singular (condition number {condition:e})")]
    SingularControl { condition: f64 },

    #[error("need more control genes than factors (m = {m}, q = {q})")]
    TooFewControls { m: usize, q: usize },

    #[error("covariates and estimated factors are collinear (condition number {condition:e})")]
    Collinearity { condition: f64 },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("prior weights are all zero over the posterior draws")]
    PriorSupport,

    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    #[error("degenerate truth: {0}")]
    DegenerateTruth(String),

    #[error("unbalanced design: {0}")]
    Unbalanced(String),

    #[error("cannot parse method tag `{tag}`: {reason}")]
    MethodTag { tag: String, reason: String },
}

impl RuvError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        RuvError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        RuvError::InvalidInput(msg.into())
    }
}

impl RuvError {
    /// True for errors caused by malformed or inconsistent input, as opposed
    /// to failures of the model on well-formed data.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RuvError::Shape(_)
                | RuvError::InvalidInput(_)
                | RuvError::MethodTag { .. }
                | RuvError::DegenerateTruth(_)
                | RuvError::Unbalanced(_)
                | RuvError::InsufficientSamples { .. }
                | RuvError::RankDeficiency { .. }
        )
    }
}
