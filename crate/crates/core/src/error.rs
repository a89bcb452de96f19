use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("automaton generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("sequence rejected at token index {index} (symbol {symbol})")]
    Rejected { index: usize, symbol: u32 },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("walk process does not terminate with probability 1: {0}")]
    NonTerminating(String),

    #[error("token {token} at sequence {sequence}, position {position} is out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange {
        sequence: usize,
        position: usize,
        token: u32,
        vocab_size: usize,
    },

    #[error("token {0} never occurs as a bigram context")]
    UnseenToken(u32),

    #[error("count table is empty")]
    EmptyCounts,

    #[error("distribution support mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("no surprising context found after {0} retries")]
    RetriesExhausted(usize),

    #[error("hypothesis {hypothesis} is missing its {missing}")]
    MissingSource {
        hypothesis: String,
        missing: &'static str,
    },

    #[error("model error: {0}")]
    Model(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}
