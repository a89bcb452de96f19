use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};

/// One training sample: global value, local value, class.
pub type Sample = (u32, u32, u32);

/// Training samples plus the held-out `(g, l)` pairs that never co-occur.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub num_global: usize,
    pub num_local: usize,
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub surprising: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "TaskConfig::default_values")]
    pub num_global: usize,
    #[serde(default = "TaskConfig::default_values")]
    pub num_local: usize,
    #[serde(default = "TaskConfig::default_classes")]
    pub num_classes: usize,
    #[serde(default = "TaskConfig::default_samples")]
    pub num_samples: usize,
    /// Fraction of `(g, l)` pairs allowed in training, before the coverage
    /// pass adds whatever is needed to cover every value.
    #[serde(default = "TaskConfig::default_density")]
    pub pair_density: f64,
    /// Scale of the per-value class preferences.
    #[serde(default = "TaskConfig::default_scale")]
    pub effect_scale: f64,
    /// Scale of the pair-specific interaction term.
    #[serde(default = "TaskConfig::default_interaction")]
    pub interaction_scale: f64,
    pub seed: u64,
}

impl TaskConfig {
    fn default_values() -> usize {
        20
    }
    fn default_classes() -> usize {
        10
    }
    fn default_samples() -> usize {
        5000
    }
    fn default_density() -> f64 {
        0.5
    }
    fn default_scale() -> f64 {
        1.5
    }
    fn default_interaction() -> f64 {
        0.5
    }

    pub fn with_seed(seed: u64) -> Self {
        Self {
            num_global: Self::default_values(),
            num_local: Self::default_values(),
            num_classes: Self::default_classes(),
            num_samples: Self::default_samples(),
            pair_density: Self::default_density(),
            effect_scale: Self::default_scale(),
            interaction_scale: Self::default_interaction(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_global == 0 || self.num_local == 0 || self.num_classes < 2 || self.num_samples == 0 {
            return Err(TheoryError::InvalidConfig(
                "need at least one value per side, two classes and one sample".into(),
            ));
        }
        if self.num_global * self.num_local < 2 {
            return Err(TheoryError::InvalidConfig("need room for a held-out pair".into()));
        }
        if !(0.0..=1.0).contains(&self.pair_density) {
            return Err(TheoryError::InvalidConfig(format!(
                "pair_density {} outside [0, 1]",
                self.pair_density
            )));
        }
        Ok(())
    }
}

impl SyntheticTask {
    /// Random task with `p(y | g, l) ∝ exp(a[g][y] + b[l][y] + c[g][l][y])`.
    /// Every value appears in training; at least one pair is held out.
    pub fn random(config: &TaskConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (ng, nl, ny) = (config.num_global, config.num_local, config.num_classes);
        let normal = |rng: &mut ChaCha8Rng, scale: f64| -> f64 {
            // Box-Muller; two uniforms per draw keeps the stream layout simple.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let a: Vec<Vec<f64>> = (0..ng)
            .map(|_| (0..ny).map(|_| normal(&mut rng, config.effect_scale)).collect())
            .collect();
        let b: Vec<Vec<f64>> = (0..nl)
            .map(|_| (0..ny).map(|_| normal(&mut rng, config.effect_scale)).collect())
            .collect();

        let mut all: Vec<(u32, u32)> = (0..ng as u32)
            .flat_map(|g| (0..nl as u32).map(move |l| (g, l)))
            .collect();
        all.shuffle(&mut rng);
        let keep = ((all.len() as f64 * config.pair_density).round() as usize).min(all.len() - 1);
        let mut allowed: BTreeSet<(u32, u32)> = all[..keep].iter().copied().collect();
        // Cover every value, then make sure something is still held out.
        let mut ls: Vec<u32> = (0..nl as u32).collect();
        ls.shuffle(&mut rng);
        for g in 0..ng as u32 {
            if !allowed.iter().any(|&(x, _)| x == g) {
                allowed.insert((g, ls[g as usize % nl]));
            }
        }
        for l in 0..nl as u32 {
            if !allowed.iter().any(|&(_, y)| y == l) {
                allowed.insert((rng.gen_range(0..ng as u32), l));
            }
        }
        let surprising: Vec<(u32, u32)> = (0..ng as u32)
            .flat_map(|g| (0..nl as u32).map(move |l| (g, l)))
            .filter(|p| !allowed.contains(p))
            .collect();
        if surprising.is_empty() {
            return Err(TheoryError::NoSurprisingPairs);
        }

        let allowed: Vec<(u32, u32)> = allowed.into_iter().collect();
        let mut class_dists = BTreeMap::new();
        for &(g, l) in &allowed {
            let logits: Vec<f64> = (0..ny)
                .map(|y| a[g as usize][y] + b[l as usize][y] + normal(&mut rng, config.interaction_scale))
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
            class_dists.insert((g, l), WeightedIndex::new(w).expect("finite positive weights"));
        }
        let train = (0..config.num_samples)
            .map(|_| {
                let (g, l) = allowed[rng.gen_range(0..allowed.len())];
                (g, l, class_dists[&(g, l)].sample(&mut rng) as u32)
            })
            .collect();
        Ok(Self {
            num_global: ng,
            num_local: nl,
            num_classes: ny,
            train,
            surprising,
        })
    }

    /// `y = g = l`, each of the `k` diagonal pairs repeated `reps` times; every
    /// off-diagonal pair is surprising.
    pub fn redundant(k: usize, reps: usize) -> Result<Self> {
        if k < 2 || reps == 0 {
            return Err(TheoryError::InvalidConfig("need k >= 2 and reps >= 1".into()));
        }
        let train = (0..reps)
            .flat_map(|_| (0..k as u32).map(|i| (i, i, i)))
            .collect();
        let surprising = (0..k as u32)
            .flat_map(|g| (0..k as u32).filter(move |&l| l != g).map(move |l| (g, l)))
            .collect();
        Ok(Self {
            num_global: k,
            num_local: k,
            num_classes: k,
            train,
            surprising,
        })
    }

    pub fn observed_pairs(&self) -> BTreeSet<(u32, u32)> {
        self.train.iter().map(|&(g, l, _)| (g, l)).collect()
    }
}
