use serde::{Deserialize, Serialize};

/// Alphabet symbol id. The end-of-sequence marker is `alphabet_size`.
pub type Symbol = u32;

/// A token sequence and whether it ended with an emitted EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<Symbol>,
    pub terminated: bool,
}

impl TokenSeq {
    pub fn new(tokens: Vec<Symbol>, terminated: bool) -> Self {
        Self { tokens, terminated }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A global context `X_G` followed by a local token `X_L` that the
/// global context makes (nearly) impossible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurprisingContext {
    pub global_ctx: Vec<Symbol>,
    pub local_token: Symbol,
    /// Upper bound on the probability of `local_token` after `global_ctx`.
    pub epsilon: f64,
    /// Lower bound on the in-context probability of every `global_ctx` token.
    pub tau: f64,
}

impl SurprisingContext {
    /// The full context `X_G ‖ X_L` the evaluated model conditions on.
    pub fn full_context(&self) -> Vec<Symbol> {
        let mut ctx = self.global_ctx.clone();
        ctx.push(self.local_token);
        ctx
    }
}
