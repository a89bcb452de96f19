use thiserror::Error;

pub type Result<T> = std::result::Result<T, TheoryError>;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("no training data")]
    EmptyData,
    #[error("did not converge in {iterations} iterations (gradient inf-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("models share no features")]
    NoSharedFeatures,
    #[error("task has no surprising pairs")]
    NoSurprisingPairs,
}
