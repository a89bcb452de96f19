use serde::{Deserialize, Serialize};

use crate::error::{LmError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Gru,
    Transformer,
}

impl Arch {
    pub fn name(self) -> &'static str {
        match self {
            Arch::Gru => "gru",
            Arch::Transformer => "transformer",
        }
    }
}

/// Model shape. For the transformer `embed_dim` must equal `hidden_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub arch: Arch,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    #[serde(default = "default_heads")]
    pub num_heads: usize,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    /// Start the output projection at zero, so the untrained model predicts
    /// the uniform distribution.
    #[serde(default)]
    pub zero_output_init: bool,
}

fn default_heads() -> usize {
    4
}

fn default_max_seq_len() -> usize {
    128
}

impl LmConfig {
    /// GRU with 128-dimensional embeddings and one 256-unit layer.
    pub fn gru(vocab_size: usize) -> Self {
        Self {
            arch: Arch::Gru,
            vocab_size,
            embed_dim: 128,
            hidden_dim: 256,
            num_layers: 1,
            num_heads: default_heads(),
            max_seq_len: default_max_seq_len(),
            zero_output_init: false,
        }
    }

    /// Pre-norm transformer with four 256-wide layers.
    pub fn transformer(vocab_size: usize) -> Self {
        Self {
            arch: Arch::Transformer,
            vocab_size,
            embed_dim: 256,
            hidden_dim: 256,
            num_layers: 4,
            num_heads: default_heads(),
            max_seq_len: default_max_seq_len(),
            zero_output_init: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LmError::InvalidConfig(m));
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.arch == Arch::Transformer {
            if self.hidden_dim % self.num_heads != 0 {
                return bad(format!(
                    "num_heads {} does not divide hidden_dim {}",
                    self.num_heads, self.hidden_dim
                ));
            }
            if self.embed_dim != self.hidden_dim {
                return bad("transformer needs embed_dim == hidden_dim".into());
            }
        }
        Ok(())
    }

    /// Rows of the output distribution: the alphabet plus EOS.
    pub fn dist_len(&self) -> usize {
        self.vocab_size + 1
    }

    /// Input id marking the start of a sequence. Shares its index with EOS.
    pub fn bos(&self) -> usize {
        self.vocab_size
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub token_swap_prob: f64,
    #[serde(default)]
    pub state_dropout_prob: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            token_swap_prob: 0.0,
            state_dropout_prob: 0.0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.token_swap_prob) {
            return Err(LmError::InvalidConfig(format!(
                "token_swap_prob {} outside [0, 1]",
                self.token_swap_prob
            )));
        }
        if !(0.0..1.0).contains(&self.state_dropout_prob) {
            return Err(LmError::InvalidConfig(format!(
                "state_dropout_prob {} outside [0, 1)",
                self.state_dropout_prob
            )));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.token_swap_prob == 0.0 && self.state_dropout_prob == 0.0
    }

    pub fn label(&self) -> String {
        match (self.token_swap_prob, self.state_dropout_prob) {
            (t, d) if t == 0.0 && d == 0.0 => "none".into(),
            (t, d) if d == 0.0 => format!("token_swap_{t}"),
            (t, d) if t == 0.0 => format!("state_dropout_{d}"),
            (t, d) => format!("token_swap_{t}+state_dropout_{d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "AdamConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "AdamConfig::default_beta1")]
    pub beta1: f64,
    #[serde(default = "AdamConfig::default_beta2")]
    pub beta2: f64,
    #[serde(default = "AdamConfig::default_eps")]
    pub eps: f64,
}

impl AdamConfig {
    fn default_lr() -> f64 {
        3e-4
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: Self::default_lr(),
            beta1: Self::default_beta1(),
            beta2: Self::default_beta2(),
            eps: Self::default_eps(),
        }
    }
}

/// Training length is `num_examples` sequences (cycling the corpus) unless
/// `epochs` is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "TrainConfig::default_num_examples")]
    pub num_examples: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseConfig,
}

impl TrainConfig {
    fn default_num_examples() -> usize {
        128_000
    }
    fn default_batch_size() -> usize {
        32
    }

    pub fn with_seed(seed: u64) -> Self {
        Self {
            optimizer: AdamConfig::default(),
            num_examples: Self::default_num_examples(),
            epochs: None,
            batch_size: Self::default_batch_size(),
            seed,
            noise: NoiseConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(LmError::InvalidConfig(format!("learning rate {} must be positive", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(LmError::InvalidConfig("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.batch_size == 0 || self.batch_size > 128 {
            return Err(LmError::InvalidConfig(format!("batch_size {} outside 1..=128", self.batch_size)));
        }
        if self.epochs == Some(0) || (self.epochs.is_none() && self.num_examples == 0) {
            return Err(LmError::InvalidConfig("training length must be positive".into()));
        }
        self.noise.validate()
    }
}
