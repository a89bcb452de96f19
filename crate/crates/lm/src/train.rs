use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use surprise_core::{CategoricalDist, NextTokenModel, Symbol, TokenSeq};

use crate::config::{AdamConfig, Arch, LmConfig, NoiseConfig, TrainConfig};
use crate::error::{LmError, Result};
use crate::model::{Example, ForwardNoise, Model};
use crate::noise::TokenSampler;


const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Where a model came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub corpus_hash: String,
    pub noise: NoiseConfig,
    pub train_config: TrainConfig,
    pub steps: usize,
    pub examples_seen: usize,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedLm {
    pub model: Model<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub lm: TrainedLm,
    /// Mean training loss of every optimizer step.
    pub loss_history: Vec<f64>,
}

/// SHA-256 over the token content of a corpus.
pub fn corpus_hash(corpus: &[TokenSeq]) -> String {
    let mut h = Sha256::new();
    for s in corpus {
        h.update((s.tokens.len() as u64).to_le_bytes());
        for t in &s.tokens {
            h.update(t.to_le_bytes());
        }
        h.update([s.terminated as u8]);
    }
    format!("{:x}", h.finalize())
}

/// Inputs start with BOS; targets are the sequence shifted left, ending in
/// EOS when the sequence terminated.
pub fn make_example(seq: &TokenSeq, vocab_size: usize) -> Example {
    let bos = vocab_size;
    let toks: Vec<usize> = seq.tokens.iter().map(|&t| t as usize).collect();
    let mut inputs = vec![bos];
    let mut targets: Vec<Option<usize>> = toks.iter().map(|&t| Some(t)).collect();
    if seq.terminated {
        inputs.extend(&toks);
        targets.push(Some(vocab_size));
    } else {
        inputs.extend(&toks[..toks.len().saturating_sub(1)]);
    }
    if targets.is_empty() {
        targets.push(None);
    }
    Example { inputs, targets }
}

fn unigram_of(corpus: &[TokenSeq], vocab_size: usize) -> Result<CategoricalDist> {
    let mut w = vec![0.0; vocab_size + 1];
    for s in corpus {
        for &t in &s.tokens {
            w[t as usize] += 1.0;
        }
    }
    Ok(CategoricalDist::from_weights(w)?)
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, params: &[Array2<f32>]) -> Self {
        Self {
            cfg,
            m: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            v: params.iter().map(|p| Array2::zeros(p.raw_dim())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Array2<f32>], grads: &[Array2<f32>]) {
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1 as f32, self.cfg.beta2 as f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.cfg.lr as f32;
        let eps = self.cfg.eps as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Random batches, each sorted by length. Bucketing whole batches by length
/// would bias the loss toward short sequences, since every batch mean
/// counts the same.
fn epoch_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    order
        .chunks_mut(batch_size)
        .map(|b| {
            b.sort_by_key(|&i| lengths[i]);
            b.to_vec()
        })
        .collect()
}

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// Trains a fresh model with Adam on mean next-token cross-entropy.
pub fn train_lm(corpus: &[TokenSeq], lm_config: &LmConfig, train_config: &TrainConfig) -> Result<TrainOutcome> {
    train_lm_with_progress(corpus, lm_config, train_config, |_, _| {})
}

/// [`train_lm`] with a callback receiving `(step, loss)` after every update.
pub fn train_lm_with_progress<P: FnMut(usize, f64)>(
    corpus: &[TokenSeq],
    lm_config: &LmConfig,
    train_config: &TrainConfig,
    mut progress: P,
) -> Result<TrainOutcome> {
    lm_config.validate()?;
    train_config.validate()?;
    if corpus.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let v = lm_config.vocab_size;
    for (i, s) in corpus.iter().enumerate() {
        if let Some((pos, &tok)) = s.tokens.iter().enumerate().find(|(_, &t)| t as usize >= v) {
            return Err(LmError::TokenOutOfRange {
                sequence: i,
                position: pos,
                token: tok,
                vocab_size: v,
            });
        }
    }
    let examples: Vec<Example> = corpus.iter().map(|s| make_example(s, v)).collect();
    if let Some(e) = examples.iter().find(|e| e.inputs.len() > lm_config.max_seq_len) {
        return Err(LmError::ContextTooLong {
            len: e.inputs.len(),
            max: lm_config.max_seq_len,
        });
    }
    let lengths: Vec<usize> = examples.iter().map(|e| e.inputs.len()).collect();
    let noise = train_config.noise;
    let sampler = if noise.token_swap_prob > 0.0 {
        Some(TokenSampler::new(&unigram_of(corpus, v)?)?)
    } else {
        None
    };

    let seed = train_config.seed;
    let mut model = Model::<f32>::init(lm_config, &mut stream(seed, INIT_STREAM))?;
    let mut shuffle_rng = stream(seed, SHUFFLE_STREAM);
    let mut noise_rng = stream(seed, NOISE_STREAM);
    let mut adam = Adam::new(train_config.optimizer, &model.params);

    let target = match train_config.epochs {
        Some(e) => e * examples.len(),
        None => train_config.num_examples,
    };
    let mut seen = 0;
    let mut history = Vec::new();
    'outer: loop {
        for (batch_id, idx) in epoch_batches(&lengths, train_config.batch_size, &mut shuffle_rng)
            .into_iter()
            .enumerate()
        {
            let take = idx.len().min(target - seen);
            let mut batch: Vec<Example> = idx[..take].iter().map(|&i| examples[i].clone()).collect();
            if let Some(s) = &sampler {
                for e in &mut batch {
                    for x in &mut e.inputs[1..] {
                        if noise_rng_bool(&mut noise_rng, noise.token_swap_prob) {
                            *x = s.sample(&mut noise_rng) as usize;
                        }
                    }
                }
            }
            let fwd_noise = (noise.state_dropout_prob > 0.0).then(|| ForwardNoise {
                state_dropout_prob: noise.state_dropout_prob,
                rng: &mut noise_rng,
            });
            let (loss, grads) = model.loss_and_grads(&batch, fwd_noise)?;
            let loss = loss as f64;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(LmError::NonFiniteLoss {
                    step: history.len(),
                    batch: batch_id,
                    loss,
                });
            }
            adam.step(&mut model.params, &grads);
            history.push(loss);
            progress(history.len(), loss);
            seen += take;
            if seen >= target {
                break 'outer;
            }
        }
    }

    let final_loss = *history.last().expect("at least one step");
    Ok(TrainOutcome {
        lm: TrainedLm {
            model,
            provenance: Provenance {
                seed,
                corpus_hash: corpus_hash(corpus),
                noise,
                train_config: train_config.clone(),
                steps: history.len(),
                examples_seen: seen,
                final_loss,
            },
        },
        loss_history: history,
    })
}

fn noise_rng_bool(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rand::Rng::gen_bool(rng, p)
}

fn softmax_f64(logits: ndarray::ArrayView1<f32>) -> surprise_core::Result<CategoricalDist> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let w: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    CategoricalDist::from_weights(w)
}

impl TrainedLm {
    pub fn config(&self) -> &LmConfig {
        &self.model.config
    }

    fn check_context(&self, context: &[Symbol], extra: usize) -> Result<()> {
        let v = self.config().vocab_size;
        if let Some((pos, &tok)) = context.iter().enumerate().find(|(_, &t)| t as usize >= v) {
            return Err(LmError::TokenOutOfRange {
                sequence: 0,
                position: pos,
                token: tok,
                vocab_size: v,
            });
        }
        let len = context.len() + 1 + extra;
        if len > self.config().max_seq_len {
            return Err(LmError::ContextTooLong {
                len,
                max: self.config().max_seq_len,
            });
        }
        Ok(())
    }

    fn inputs(&self, context: &[Symbol]) -> Vec<usize> {
        std::iter::once(self.config().bos())
            .chain(context.iter().map(|&t| t as usize))
            .collect()
    }
}

/// Next-token distribution (alphabet plus EOS) after `context`.
pub fn lm_next_dist(lm: &TrainedLm, context: &[Symbol]) -> Result<CategoricalDist> {
    lm.check_context(context, 0)?;
    let inputs = lm.inputs(context);
    let logits = match lm.config().arch {
        Arch::Gru => {
            let mut state = lm.model.gru_initial_state();
            let mut out = None;
            for &i in &inputs {
                out = Some(lm.model.gru_step(&mut state, i));
            }
            out.expect("BOS is always fed")
        }
        Arch::Transformer => lm.model.last_logits(&[inputs])?,
    };
    Ok(softmax_f64(logits.row(0))?)
}

impl NextTokenModel for TrainedLm {
    fn vocab_size(&self) -> usize {
        self.config().vocab_size
    }

    fn next_dist(&self, context: &[Symbol]) -> surprise_core::Result<CategoricalDist> {
        Ok(lm_next_dist(self, context)?)
    }

    fn next_dists_after(
        &self,
        prefix: &[Symbol],
        continuations: &[Symbol],
    ) -> surprise_core::Result<Vec<CategoricalDist>> {
        self.check_context(prefix, 1)?;
        if let Some(&t) = continuations.iter().find(|&&t| t as usize >= self.vocab_size()) {
            return Err(surprise_core::Error::UnseenToken(t));
        }
        let inputs = self.inputs(prefix);
        match self.config().arch {
            Arch::Gru => {
                let mut state = self.model.gru_initial_state();
                for &i in &inputs {
                    self.model.gru_step(&mut state, i);
                }
                continuations
                    .iter()
                    .map(|&c| {
                        let mut s = state.clone();
                        softmax_f64(self.model.gru_step(&mut s, c as usize).row(0))
                    })
                    .collect()
            }
            Arch::Transformer => {
                let batch: Vec<Vec<usize>> = continuations
                    .iter()
                    .map(|&c| {
                        let mut i = inputs.clone();
                        i.push(c as usize);
                        i
                    })
                    .collect();
                if batch.is_empty() {
                    return Ok(Vec::new());
                }
                let logits = self.model.last_logits(&batch)?;
                logits.rows().into_iter().map(softmax_f64).collect()
            }
        }
    }
}
