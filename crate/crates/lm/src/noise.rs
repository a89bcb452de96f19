//! Train-time noise: token substitution on inputs and dropout on context
//! representations.

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use surprise_core::{CategoricalDist, Symbol, TokenSeq};

use crate::error::{LmError, Result};
use crate::tape::Real;

/// Samples replacement tokens from a unigram distribution with EOS removed.
#[derive(Debug, Clone)]
pub struct TokenSampler {
    index: WeightedIndex<f64>,
}

impl TokenSampler {
    pub fn new(unigram: &CategoricalDist) -> Result<Self> {
        let weights = &unigram.probs()[..unigram.eos_index()];
        let index = WeightedIndex::new(weights)
            .map_err(|e| LmError::InvalidConfig(format!("unigram has no non-EOS mass: {e}")))?;
        Ok(Self { index })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Symbol {
        self.index.sample(rng) as Symbol
    }

    /// Replaces each token independently with probability `p_tok`.
    pub fn corrupt<R: Rng + ?Sized>(&self, tokens: &[Symbol], p_tok: f64, rng: &mut R) -> Vec<Symbol> {
        if p_tok == 0.0 {
            return tokens.to_vec();
        }
        tokens
            .iter()
            .map(|&t| if rng.gen_bool(p_tok) { self.sample(rng) } else { t })
            .collect()
    }
}

/// Token-substitution noise over a whole sequence. Only inputs are noised
/// during training; callers keep the original sequence as the targets.
pub fn apply_token_noise<R: Rng + ?Sized>(
    seq: &TokenSeq,
    p_tok: f64,
    unigram: &CategoricalDist,
    rng: &mut R,
) -> Result<TokenSeq> {
    if !(0.0..=1.0).contains(&p_tok) {
        return Err(LmError::InvalidConfig(format!("token_swap_prob {p_tok} outside [0, 1]")));
    }
    let sampler = TokenSampler::new(unigram)?;
    Ok(TokenSeq::new(sampler.corrupt(&seq.tokens, p_tok, rng), seq.terminated))
}

/// Inverted-dropout mask: 0 with probability `p`, `1/(1−p)` otherwise.
pub fn dropout_mask<F: Real, R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<F> {
    let keep = F::from_f64(1.0 / (1.0 - p)).unwrap();
    Array2::from_shape_simple_fn(shape, || if rng.gen_bool(p) { F::zero() } else { keep })
}

/// Zeroes each feature with probability `p_drop` and rescales survivors.
pub fn state_dropout<F: Real, R: Rng + ?Sized>(features: &Array2<F>, p_drop: f64, rng: &mut R) -> Result<Array2<F>> {
    if p_drop == 1.0 {
        return Err(LmError::DegenerateDropout(p_drop));
    }
    if !(0.0..1.0).contains(&p_drop) {
        return Err(LmError::InvalidConfig(format!("state_dropout_prob {p_drop} outside [0, 1)")));
    }
    if p_drop == 0.0 {
        return Ok(features.clone());
    }
    Ok(features * &dropout_mask(features.dim(), p_drop, rng))
}
