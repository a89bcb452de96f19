//! Parameter layout, initialization and forward passes for both
//! architectures.

use ndarray::{s, Array2};
use rand::Rng;

use crate::config::{Arch, LmConfig};
use crate::error::{LmError, Result};
use crate::noise::dropout_mask;
use crate::tape::{Real, Tape, Var};

/// Named parameter shapes in storage order.
pub fn param_shapes(cfg: &LmConfig) -> Vec<(String, (usize, usize))> {
    let v = cfg.dist_len();
    let h = cfg.hidden_dim;
    let mut out = vec![("embed".to_string(), (v, cfg.embed_dim))];
    match cfg.arch {
        Arch::Gru => {
            for l in 0..cfg.num_layers {
                let input = if l == 0 { cfg.embed_dim } else { h };
                out.push((format!("gru{l}.w_ih"), (input, 3 * h)));
                out.push((format!("gru{l}.b_ih"), (1, 3 * h)));
                out.push((format!("gru{l}.w_hh"), (h, 3 * h)));
                out.push((format!("gru{l}.b_hh"), (1, 3 * h)));
            }
        }
        Arch::Transformer => {
            for l in 0..cfg.num_layers {
                for (name, shape) in [
                    ("ln1.g", (1, h)),
                    ("ln1.b", (1, h)),
                    ("w_qkv", (h, 3 * h)),
                    ("b_qkv", (1, 3 * h)),
                    ("w_o", (h, h)),
                    ("b_o", (1, h)),
                    ("ln2.g", (1, h)),
                    ("ln2.b", (1, h)),
                    ("w_ff1", (h, 4 * h)),
                    ("b_ff1", (1, 4 * h)),
                    ("w_ff2", (4 * h, h)),
                    ("b_ff2", (1, h)),
                ] {
                    out.push((format!("block{l}.{name}"), shape));
                }
            }
            out.push(("ln_f.g".into(), (1, h)));
            out.push(("ln_f.b".into(), (1, h)));
        }
    }
    out.push(("out.w".into(), (h, v)));
    out.push(("out.b".into(), (1, v)));
    out
}

const GRU_PER_LAYER: usize = 4;
const BLOCK_PER_LAYER: usize = 12;

/// One training or inference sequence: model inputs (BOS first) and the
/// aligned next-token targets. `None` targets carry no loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub inputs: Vec<usize>,
    pub targets: Vec<Option<usize>>,
}

/// Train-time noise applied inside the forward pass.
pub struct ForwardNoise<'r, R: Rng + ?Sized> {
    pub state_dropout_prob: f64,
    pub rng: &'r mut R,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<F> {
    pub config: LmConfig,
    pub params: Vec<Array2<F>>,
}

impl<F: Real> Model<F> {
    /// Uniform `±1/√fan_in` init. Embedding rows are selected by a one-hot
    /// input, so their fan-in is 1. Layer-norm gains start at 1, shifts at 0.
    pub fn init<R: Rng + ?Sized>(config: &LmConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let shapes = param_shapes(config);
        let mut params = Vec::with_capacity(shapes.len());
        let mut fan_in = 1usize;
        for (name, (rows, cols)) in &shapes {
            let p = if name.ends_with(".g") {
                Array2::ones((*rows, *cols))
            } else if name.ends_with("ln1.b") || name.ends_with("ln2.b") || name == "ln_f.b" {
                Array2::zeros((*rows, *cols))
            } else if name.starts_with("out.") && config.zero_output_init {
                Array2::zeros((*rows, *cols))
            } else {
                if name == "embed" {
                    fan_in = 1;
                } else if *rows > 1 {
                    fan_in = *rows;
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_simple_fn((*rows, *cols), || F::from_f64(rng.gen_range(-bound..bound)).unwrap())
            };
            params.push(p);
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| p.mapv(|x| G::from_f64(x.to_f64().unwrap()).unwrap()))
                .collect(),
        }
    }

    /// Builds the graph for a batch and returns `(param leaves, logits,
    /// targets)`; logits rows follow the order of `targets`.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        batch: &[Example],
        noise: Option<ForwardNoise<'_, R>>,
    ) -> Result<(Vec<Var>, Var, Vec<Option<usize>>)> {
        let seq = batch.iter().map(|e| e.inputs.len()).max().unwrap_or(0);
        if seq == 0 {
            return Err(LmError::InvalidConfig("empty batch".into()));
        }
        if seq > self.config.max_seq_len {
            return Err(LmError::ContextTooLong {
                len: seq,
                max: self.config.max_seq_len,
            });
        }
        let pad = self.config.bos();
        for e in batch {
            if let Some(&t) = e.inputs.iter().find(|&&t| t > pad) {
                return Err(LmError::InvalidConfig(format!("input id {t} outside the embedding")));
            }
        }
        let vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        let (logits, targets) = match self.config.arch {
            Arch::Gru => self.forward_gru(tape, &vars, batch, seq, pad, noise),
            Arch::Transformer => self.forward_transformer(tape, &vars, batch, seq, pad, noise),
        };
        Ok((vars, logits, targets))
    }

    /// Rows are time-major: `t * batch + b`.
    fn forward_gru<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        batch: &[Example],
        seq: usize,
        pad: usize,
        mut noise: Option<ForwardNoise<'_, R>>,
    ) -> (Var, Vec<Option<usize>>) {
        let b = batch.len();
        let h = self.config.hidden_dim;
        let mut ids = Vec::with_capacity(seq * b);
        let mut targets = Vec::with_capacity(seq * b);
        for t in 0..seq {
            for e in batch {
                ids.push(e.inputs.get(t).copied().unwrap_or(pad));
                targets.push(e.targets.get(t).copied().flatten());
            }
        }
        let mut layer_in = tape.gather(vars[0], &ids);
        for l in 0..self.config.num_layers {
            let base = 1 + GRU_PER_LAYER * l;
            let proj = tape.affine(layer_in, vars[base], vars[base + 1]);
            let mut state = tape.leaf(Array2::zeros((b, h)));
            let mut outs = Vec::with_capacity(seq);
            for t in 0..seq {
                let x = tape.rows(proj, t * b, b);
                state = tape.gru_cell(x, state, vars[base + 2], vars[base + 3]);
                if let Some(n) = noise.as_mut().filter(|n| n.state_dropout_prob > 0.0) {
                    let mask = dropout_mask((b, h), n.state_dropout_prob, &mut *n.rng);
                    state = tape.mask_scale(state, mask);
                }
                outs.push(state);
            }
            layer_in = tape.concat_rows(&outs);
        }
        let n = vars.len();
        (tape.affine(layer_in, vars[n - 2], vars[n - 1]), targets)
    }

    /// Rows are batch-major: `b * seq + t`.
    fn forward_transformer<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        batch: &[Example],
        seq: usize,
        pad: usize,
        mut noise: Option<ForwardNoise<'_, R>>,
    ) -> (Var, Vec<Option<usize>>) {
        let b = batch.len();
        let h = self.config.hidden_dim;
        let mut ids = Vec::with_capacity(seq * b);
        let mut targets = Vec::with_capacity(seq * b);
        for e in batch {
            for t in 0..seq {
                ids.push(e.inputs.get(t).copied().unwrap_or(pad));
                targets.push(e.targets.get(t).copied().flatten());
            }
        }
        let emb = tape.gather(vars[0], &ids);
        let pe = positional_encoding::<F>(seq, h);
        let mut pos = Array2::zeros((b * seq, h));
        for i in 0..b {
            pos.slice_mut(s![i * seq..(i + 1) * seq, ..]).assign(&pe);
        }
        let pos = tape.leaf(pos);
        let mut x = tape.add(emb, pos);
        for l in 0..self.config.num_layers {
            let p = &vars[1 + BLOCK_PER_LAYER * l..1 + BLOCK_PER_LAYER * (l + 1)];
            let a = tape.layer_norm(x, p[0], p[1]);
            let qkv = tape.affine(a, p[2], p[3]);
            let att = tape.causal_attention(qkv, b, seq, self.config.num_heads);
            let mut o = tape.affine(att, p[4], p[5]);
            if let Some(n) = noise.as_mut().filter(|n| n.state_dropout_prob > 0.0) {
                let mask = dropout_mask((b * seq, h), n.state_dropout_prob, &mut *n.rng);
                o = tape.mask_scale(o, mask);
            }
            x = tape.add(x, o);
            let f = tape.layer_norm(x, p[6], p[7]);
            let f = tape.affine(f, p[8], p[9]);
            let f = tape.relu(f);
            let f = tape.affine(f, p[10], p[11]);
            x = tape.add(x, f);
        }
        let n = vars.len();
        let x = tape.layer_norm(x, vars[n - 4], vars[n - 3]);
        (tape.affine(x, vars[n - 2], vars[n - 1]), targets)
    }

    /// Mean next-token cross-entropy of a batch, without gradients or noise.
    pub fn loss(&self, batch: &[Example]) -> Result<F> {
        let mut tape = Tape::new();
        let (_, logits, targets) = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, batch, None)?;
        let loss = tape.softmax_xent(logits, &targets);
        Ok(tape.value(loss)[(0, 0)])
    }

    /// Loss and parameter gradients for a batch.
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        batch: &[Example],
        noise: Option<ForwardNoise<'_, R>>,
    ) -> Result<(F, Vec<Array2<F>>)> {
        let mut tape = Tape::new();
        let (vars, logits, targets) = self.forward(&mut tape, batch, noise)?;
        let loss = tape.softmax_xent(logits, &targets);
        let mut grads = tape.backward(loss);
        let param_grads = vars
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads[v.0].take().unwrap_or_else(|| Array2::zeros(p.raw_dim())))
            .collect();
        Ok((tape.value(loss)[(0, 0)], param_grads))
    }

    /// Logits at the last position of each input sequence (all the same
    /// length), one row per sequence.
    pub fn last_logits(&self, inputs: &[Vec<usize>]) -> Result<Array2<F>> {
        let batch: Vec<Example> = inputs
            .iter()
            .map(|i| Example {
                inputs: i.clone(),
                targets: vec![None; i.len()],
            })
            .collect();
        let seq = inputs.first().map_or(0, |i| i.len());
        if inputs.iter().any(|i| i.len() != seq) {
            return Err(LmError::InvalidConfig("last_logits needs equal lengths".into()));
        }
        let mut tape = Tape::new();
        let (_, logits, _) = self.forward::<rand_chacha::ChaCha8Rng>(&mut tape, &batch, None)?;
        let all = tape.value(logits);
        let b = inputs.len();
        let mut out = Array2::zeros((b, all.ncols()));
        for i in 0..b {
            let row = match self.config.arch {
                Arch::Gru => (seq - 1) * b + i,
                Arch::Transformer => i * seq + seq - 1,
            };
            out.row_mut(i).assign(&all.row(row));
        }
        Ok(out)
    }

    /// Fresh recurrent state (GRU only): one zero row per layer.
    pub fn gru_initial_state(&self) -> Vec<Array2<F>> {
        vec![Array2::zeros((1, self.config.hidden_dim)); self.config.num_layers]
    }

    /// Feeds one input id through the GRU stack, updating `state`, and
    /// returns the logits for the next token.
    pub fn gru_step(&self, state: &mut [Array2<F>], input: usize) -> Array2<F> {
        assert_eq!(self.config.arch, Arch::Gru, "gru_step on a transformer");
        let mut x = self.params[0].slice(s![input..input + 1, ..]).to_owned();
        for (l, h) in state.iter_mut().enumerate() {
            let base = 1 + GRU_PER_LAYER * l;
            let xp = x.dot(&self.params[base]) + &self.params[base + 1];
            let hh = h.dot(&self.params[base + 2]) + &self.params[base + 3];
            let hid = self.config.hidden_dim;
            let sig = |v: F| F::one() / (F::one() + (-v).exp());
            let mut next = Array2::zeros((1, hid));
            for k in 0..hid {
                let r = sig(xp[(0, k)] + hh[(0, k)]);
                let z = sig(xp[(0, hid + k)] + hh[(0, hid + k)]);
                let n = (xp[(0, 2 * hid + k)] + r * hh[(0, 2 * hid + k)]).tanh();
                next[(0, k)] = (F::one() - z) * n + z * h[(0, k)];
            }
            *h = next;
            x = h.clone();
        }
        let n = self.params.len();
        x.dot(&self.params[n - 2]) + &self.params[n - 1]
    }
}

/// Sinusoidal encodings: `sin(pos / 10000^(2i/d))` on even columns, `cos` on odd.
pub fn positional_encoding<F: Real>(seq: usize, dim: usize) -> Array2<F> {
    Array2::from_shape_fn((seq, dim), |(pos, c)| {
        let i = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / dim as f64);
        F::from_f64(if c % 2 == 0 { angle.sin() } else { angle.cos() }).unwrap()
    })
}
