//! Experiment and theory-sweep configuration files.

use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use surprise_core::automata::DfaConfig;
use surprise_core::hypotheses::Hypothesis;
use surprise_lm::{AdamConfig, Arch, LmConfig, NoiseConfig, TrainConfig};
use surprise_theory::{TaskConfig, DEFAULT_TOL};

fn d_states() -> usize {
    8
}
fn d_alphabet() -> usize {
    128
}
fn d_four() -> usize {
    4
}
fn d_accept() -> f64 {
    0.5
}
fn d_languages() -> usize {
    3
}
fn d_num_train() -> usize {
    128_000
}
fn d_num_val() -> usize {
    1_000
}
fn d_walk_len() -> usize {
    64
}
fn d_beam() -> usize {
    8
}
fn d_top_k() -> usize {
    10
}
fn d_heads() -> usize {
    4
}
fn d_seq_len() -> usize {
    128
}
fn d_batch() -> usize {
    32
}
fn d_contexts() -> usize {
    100
}
fn d_grid() -> f64 {
    0.01
}
fn d_grid_2d() -> f64 {
    0.05
}
fn d_noise() -> Vec<NoiseConfig> {
    vec![NoiseConfig::default()]
}
fn d_hypotheses() -> Vec<Hypothesis> {
    Hypothesis::standard_suite()
}
fn d_models() -> Vec<ModelEntry> {
    vec![ModelEntry::defaults(Arch::Gru, (0..5).collect()), ModelEntry::defaults(Arch::Transformer, (0..4).collect())]
}

/// Automaton shape; the seed comes from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DfaParams {
    #[serde(default = "d_states")]
    pub num_states: usize,
    #[serde(default = "d_alphabet")]
    pub alphabet_size: usize,
    #[serde(default = "d_four")]
    pub num_neighbors: usize,
    #[serde(default = "d_four")]
    pub num_symbol_uses: usize,
    #[serde(default = "d_accept")]
    pub accept_prob: f64,
}

impl Default for DfaParams {
    fn default() -> Self {
        Self {
            num_states: d_states(),
            alphabet_size: d_alphabet(),
            num_neighbors: d_four(),
            num_symbol_uses: d_four(),
            accept_prob: d_accept(),
        }
    }
}

impl DfaParams {
    pub fn with_seed(&self, seed: u64) -> DfaConfig {
        DfaConfig {
            num_states: self.num_states,
            alphabet_size: self.alphabet_size,
            num_neighbors: self.num_neighbors,
            num_symbol_uses: self.num_symbol_uses,
            accept_prob: self.accept_prob,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusParams {
    #[serde(default = "d_num_train")]
    pub num_train: usize,
    #[serde(default = "d_num_val")]
    pub num_val: usize,
    #[serde(default = "d_walk_len")]
    pub max_walk_len: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            num_train: d_num_train(),
            num_val: d_num_val(),
            max_walk_len: d_walk_len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LanguageConfig {
    /// `count` random automata, each with its own sampled corpus.
    Dfa {
        #[serde(default = "d_languages")]
        count: usize,
        #[serde(default)]
        automaton: DfaParams,
        #[serde(default)]
        corpus: CorpusParams,
    },
    /// A pre-tokenized corpus; contexts come from its held-out tail and the
    /// global estimate from beam search over the first trained model.
    Natural {
        train: PathBuf,
        /// Sentences held out of training to draw contexts from.
        #[serde(default = "d_num_val")]
        num_heldout: usize,
        #[serde(default = "d_beam")]
        beam_width: usize,
        #[serde(default = "d_top_k")]
        top_k: usize,
    },
}

impl Default for LanguageConfig {
    fn default() -> Self {
        Self::Dfa {
            count: d_languages(),
            automaton: DfaParams::default(),
            corpus: CorpusParams::default(),
        }
    }
}

/// One architecture and the seeds to train it with. Unset sizes take the
/// architecture's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub arch: Arch,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub num_layers: Option<usize>,
    #[serde(default = "d_heads")]
    pub num_heads: usize,
    #[serde(default = "d_seq_len")]
    pub max_seq_len: usize,
    #[serde(default)]
    pub zero_output_init: bool,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Overrides the experiment-wide noise list for this architecture.
    #[serde(default)]
    pub noise: Option<Vec<NoiseConfig>>,
    /// Overrides `train.optimizer.lr` for this architecture.
    #[serde(default)]
    pub lr: Option<f64>,
}

impl ModelEntry {
    pub fn defaults(arch: Arch, seeds: Vec<u64>) -> Self {
        Self {
            arch,
            embed_dim: None,
            hidden_dim: None,
            num_layers: None,
            num_heads: d_heads(),
            max_seq_len: d_seq_len(),
            zero_output_init: false,
            seeds,
            noise: None,
            lr: None,
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LmConfig {
        let base = match self.arch {
            Arch::Gru => LmConfig::gru(vocab_size),
            Arch::Transformer => LmConfig::transformer(vocab_size),
        };
        LmConfig {
            embed_dim: self.embed_dim.unwrap_or(base.embed_dim),
            hidden_dim: self.hidden_dim.unwrap_or(base.hidden_dim),
            num_layers: self.num_layers.unwrap_or(base.num_layers),
            num_heads: self.num_heads,
            max_seq_len: self.max_seq_len,
            zero_output_init: self.zero_output_init,
            ..base
        }
    }

    pub fn train_params(&self, base: &TrainParams) -> TrainParams {
        let mut t = base.clone();
        if let Some(lr) = self.lr {
            t.optimizer.lr = lr;
        }
        t
    }

    pub fn noise_list<'a>(&'a self, default: &'a [NoiseConfig]) -> &'a [NoiseConfig] {
        self.noise.as_deref().unwrap_or(default)
    }
}

/// Optimizer and schedule; seed and noise are filled in per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(default)]
    pub optimizer: AdamConfig,
    #[serde(default = "d_num_train")]
    pub num_examples: usize,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            optimizer: AdamConfig::default(),
            num_examples: d_num_train(),
            epochs: None,
            batch_size: d_batch(),
        }
    }
}

impl TrainParams {
    pub fn with(&self, seed: u64, noise: NoiseConfig) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            num_examples: self.num_examples,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteParams {
    #[serde(default = "d_grid")]
    pub grid_step: f64,
    #[serde(default = "d_grid_2d")]
    pub grid_step_2d: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        Self {
            grid_step: d_grid(),
            grid_step_2d: d_grid_2d(),
        }
    }
}

/// Everything `run-suite` does, apart from the top-level seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub language: LanguageConfig,
    #[serde(default = "d_models")]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default = "d_noise")]
    pub noise: Vec<NoiseConfig>,
    #[serde(default = "d_hypotheses")]
    pub hypotheses: Vec<Hypothesis>,
    #[serde(default = "d_contexts")]
    pub num_contexts: usize,
    #[serde(default)]
    pub suite: SuiteParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            language: LanguageConfig::default(),
            models: d_models(),
            train: TrainParams::default(),
            noise: d_noise(),
            hypotheses: d_hypotheses(),
            num_contexts: d_contexts(),
            suite: SuiteParams::default(),
        }
    }
}

impl ExperimentConfig {
    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.hypotheses.is_empty() {
            bail!("hypotheses: list is empty");
        }
        let mut labels = BTreeSet::new();
        for h in &self.hypotheses {
            h.validate().with_context(|| format!("hypothesis {}", h.label()))?;
            if !labels.insert(h.label()) {
                bail!("hypotheses: {} listed twice", h.label());
            }
        }
        if self.models.is_empty() {
            bail!("models: list is empty");
        }
        let archs: BTreeSet<&str> = self.models.iter().map(|m| m.arch.name()).collect();
        if archs.len() != self.models.len() {
            bail!("models: each architecture may appear once");
        }
        if self.num_contexts == 0 {
            bail!("num_contexts must be positive");
        }
        for step in [self.suite.grid_step, self.suite.grid_step_2d] {
            if !(step > 0.0 && step <= 1.0) {
                bail!("suite grid step {step} outside (0, 1]");
            }
        }
        let vocab = match &self.language {
            LanguageConfig::Dfa {
                count,
                automaton,
                corpus,
            } => {
                if *count == 0 {
                    bail!("language.dfa.count must be positive");
                }
                automaton.with_seed(0).validate()?;
                if corpus.num_train == 0 {
                    bail!("language.dfa.corpus.num_train must be positive");
                }
                automaton.alphabet_size
            }
            LanguageConfig::Natural { beam_width, top_k, .. } => {
                if *beam_width == 0 || *top_k == 0 {
                    bail!("language.natural: beam_width and top_k must be positive");
                }
                1
            }
        };
        for (i, m) in self.models.iter().enumerate() {
            let ctx = || format!("models[{i}]");
            if m.seeds.is_empty() {
                bail!("models[{i}].seeds: list is empty");
            }
            if m.seeds.iter().collect::<BTreeSet<_>>().len() != m.seeds.len() {
                bail!("models[{i}].seeds: duplicate seed");
            }
            m.lm_config(vocab).validate().with_context(ctx)?;
            let noise = m.noise_list(&self.noise);
            if noise.is_empty() {
                bail!("models[{i}]: noise list is empty");
            }
            for n in noise {
                n.validate().with_context(ctx)?;
                m.train_params(&self.train).with(0, *n).validate().with_context(ctx)?;
            }
        }
        Ok(())
    }
}

/// `train-lm` settings: one model, one noise setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainLmConfig {
    #[serde(default = "d_gru")]
    pub model: ModelEntry,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub noise: NoiseConfig,
}

fn d_gru() -> ModelEntry {
    ModelEntry::defaults(Arch::Gru, Vec::new())
}

impl Default for TrainLmConfig {
    fn default() -> Self {
        Self {
            model: d_gru(),
            train: TrainParams::default(),
            noise: NoiseConfig::default(),
        }
    }
}

/// Task shape for the theory sweep; task seeds come from the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    #[serde(default = "d_task_values")]
    pub num_global: usize,
    #[serde(default = "d_task_values")]
    pub num_local: usize,
    #[serde(default = "d_task_classes")]
    pub num_classes: usize,
    #[serde(default = "d_task_samples")]
    pub num_samples: usize,
    #[serde(default = "d_density")]
    pub pair_density: f64,
    #[serde(default = "d_effect")]
    pub effect_scale: f64,
    #[serde(default = "d_interaction")]
    pub interaction_scale: f64,
}

fn d_task_values() -> usize {
    20
}
fn d_task_classes() -> usize {
    10
}
fn d_task_samples() -> usize {
    5000
}
fn d_density() -> f64 {
    0.5
}
fn d_effect() -> f64 {
    1.5
}
fn d_interaction() -> f64 {
    0.5
}
fn d_tol() -> f64 {
    DEFAULT_TOL
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            num_global: d_task_values(),
            num_local: d_task_values(),
            num_classes: d_task_classes(),
            num_samples: d_task_samples(),
            pair_density: d_density(),
            effect_scale: d_effect(),
            interaction_scale: d_interaction(),
        }
    }
}

impl TaskParams {
    pub fn with_seed(&self, seed: u64) -> TaskConfig {
        TaskConfig {
            num_global: self.num_global,
            num_local: self.num_local,
            num_classes: self.num_classes,
            num_samples: self.num_samples,
            pair_density: self.pair_density,
            effect_scale: self.effect_scale,
            interaction_scale: self.interaction_scale,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryConfig {
    pub num_tasks: usize,
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub task: TaskParams,
    /// Gradient inf-norm at which training stops.
    #[serde(default = "d_tol")]
    pub tol: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            num_tasks: 20,
            lambdas: vec![0.01, 0.1, 1.0, 10.0],
            task: TaskParams::default(),
            tol: DEFAULT_TOL,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            bail!("num_tasks must be positive");
        }
        if self.lambdas.is_empty() {
            bail!("lambdas: list is empty");
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            bail!("lambdas: {l} is not a positive number");
        }
        if !(self.tol > 0.0) {
            bail!("tol must be positive");
        }
        self.task.with_seed(0).validate()?;
        Ok(())
    }
}
