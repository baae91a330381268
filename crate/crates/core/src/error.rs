use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {point:?} lies outside the domain ({domain})")]
    Domain { point: Vec<f64>, domain: String },

    #[error("non-finite value in {context} at {at:?}")]
    NonFinite { context: String, at: Vec<f64> },

    #[error("no convergence: {message}")]
    NoConvergence { message: String, best: Option<f64> },

    #[error("truncation radius {current} is insufficient: tail {tail:e} exceeds {allowed:e}, need T >= {required}")]
    TruncationInsufficient {
        current: f64,
        required: f64,
        tail: f64,
        allowed: f64,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("linear solve failed: {message} (condition estimate {condition:e})")]
    LinearSolve { message: String, condition: f64 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>, at: &[f64]) -> Self {
        Error::NonFinite {
            context: context.into(),
            at: at.to_vec(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
