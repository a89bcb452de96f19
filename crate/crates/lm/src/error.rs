use thiserror::Error;

pub type Result<T> = std::result::Result<T, LmError>;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("token {token} at sequence {sequence} position {position} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange {
        sequence: usize,
        position: usize,
        token: u32,
        vocab_size: usize,
    },
    #[error("context of length {len} exceeds max_seq_len {max} (BOS included)")]
    ContextTooLong { len: usize, max: usize },
    #[error("non-finite loss {loss} at step {step} (batch {batch})")]
    NonFiniteLoss { step: usize, batch: usize, loss: f64 },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("dropout probability {0} would zero every feature")]
    DegenerateDropout(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Core(#[from] surprise_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<LmError> for surprise_core::Error {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Core(c) => c,
            other => surprise_core::Error::Model(other.to_string()),
        }
    }
}
