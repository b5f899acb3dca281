use thiserror::Error;

/// Errors raised by the intervention engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("backward called without a matching forward pass: {0}")]
    MissingForward(String),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("model must be in eval mode: {0}")]
    NotEvalMode(&'static str),
    #[error("training diverged: non-finite loss at {stage} {index}")]
    Diverged { stage: &'static str, index: usize },
    #[error("non-finite intervention objective at inner step {step}")]
    NonFiniteObjective { step: usize },
    #[error("single-class labels: {0}")]
    SingleClass(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("zero variance input")]
    ZeroVariance,
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::Shape {
        op,
        expected: expected.into(),
        got: got.into(),
    }
}
