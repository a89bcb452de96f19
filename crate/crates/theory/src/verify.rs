//! Empirical checks of the weight-difference lemma and the product-of-experts
//! approximation for surprising contexts.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};
use crate::features::{FeatureKey, FeatureSubset};
use crate::loglinear::{train_subset, LogLinearModel};
use crate::task::{Sample, SyntheticTask};

/// Which ε feeds a bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonVariant {
    /// `Σ_{x: φᵢ(x)=1} Σ_y |p¹ − p²|` over training samples, with multiplicity.
    Sum,
    /// `max_{x: φᵢ(x)=1} Σ_y |p¹ − p²|`.
    PerContextMax,
}

/// A bound under test: `ε` variant and the exponent multiplier `k` in
/// `e^{kε/λ} − 1`. The weight bound is `ε/λ` for every variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundVariant {
    pub epsilon: EpsilonVariant,
    pub exponent: f64,
}

impl BoundVariant {
    /// The bound as stated.
    pub const STATED: Self = Self {
        epsilon: EpsilonVariant::Sum,
        exponent: 4.0,
    };
    /// Halved exponent. Still provable, so it is not expected to fail.
    pub const HALF_EXPONENT: Self = Self {
        epsilon: EpsilonVariant::Sum,
        exponent: 2.0,
    };
    /// ε read as a per-context quantity: a genuinely weaker certificate.
    pub const PER_CONTEXT: Self = Self {
        epsilon: EpsilonVariant::PerContextMax,
        exponent: 4.0,
    };

    pub fn name(&self) -> String {
        let e = match self.epsilon {
            EpsilonVariant::Sum => "sum",
            EpsilonVariant::PerContextMax => "per_context_max",
        };
        format!("{e}_exp{}", self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEpsilon {
    pub feature: FeatureKey,
    pub sum: f64,
    pub per_context_max: f64,
    /// Training samples with the feature active.
    pub support: usize,
}

impl FeatureEpsilon {
    pub fn get(&self, v: EpsilonVariant) -> f64 {
        match v {
            EpsilonVariant::Sum => self.sum,
            EpsilonVariant::PerContextMax => self.per_context_max,
        }
    }
}

/// Per shared feature, how much the two models' predictions differ over the
/// training contexts where that feature fires.
pub fn measure_epsilon(a: &LogLinearModel, b: &LogLinearModel, samples: &[Sample]) -> Result<Vec<FeatureEpsilon>> {
    let shared: Vec<FeatureKey> = a
        .layout
        .keys()
        .iter()
        .copied()
        .filter(|k| b.layout.column(*k).is_some())
        .collect();
    if shared.is_empty() {
        return Err(TheoryError::NoSharedFeatures);
    }
    // Prediction gaps depend only on the context, so compute them once.
    let mut gaps = std::collections::BTreeMap::new();
    for &(g, l, _) in samples {
        if let std::collections::btree_map::Entry::Vacant(e) = gaps.entry((g, l)) {
            let pa = a.predict(g, l)?;
            let pb = b.predict(g, l)?;
            e.insert(pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).sum::<f64>());
        }
    }
    Ok(shared
        .into_iter()
        .map(|key| {
            let mut out = FeatureEpsilon {
                feature: key,
                sum: 0.0,
                per_context_max: 0.0,
                support: 0,
            };
            for &(g, l, _) in samples {
                let fires = match key {
                    FeatureKey::Global(v) => g == v,
                    FeatureKey::Local(v) => l == v,
                    FeatureKey::Conjunction(x, y) => g == x && l == y,
                };
                if fires {
                    let gap = gaps[&(g, l)];
                    out.sum += gap;
                    out.per_context_max = out.per_context_max.max(gap);
                    out.support += 1;
                }
            }
            out
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaPair {
    pub class: usize,
    pub feature: FeatureKey,
    pub weight_gap: f64,
    pub epsilon: f64,
    pub bound: f64,
    /// `bound − weight_gap`; negative means violated.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub reg_lambda: f64,
    pub variant: EpsilonVariant,
    pub slack: f64,
    pub pairs_checked: usize,
    pub violations: Vec<LemmaPair>,
    /// Pair with the smallest margin.
    pub tightest: LemmaPair,
    pub pass: bool,
}

/// Optimization slack for weight bounds: `2·tol/λ`.
pub fn slack(tol: f64, reg_lambda: f64) -> f64 {
    2.0 * tol / reg_lambda
}

/// Checks `|θ¹_{y,i} − θ²_{y,i}| ≤ εᵢ/λ + slack` for every class and shared
/// feature.
pub fn verify_lemma(
    a: &LogLinearModel,
    b: &LogLinearModel,
    samples: &[Sample],
    reg_lambda: f64,
    tol: f64,
    variant: EpsilonVariant,
) -> Result<LemmaReport> {
    if a.reg_lambda != reg_lambda || b.reg_lambda != reg_lambda {
        return Err(TheoryError::InvalidConfig("models were trained with a different reg_lambda".into()));
    }
    let eps = measure_epsilon(a, b, samples)?;
    let s = slack(tol, reg_lambda);
    let mut violations = Vec::new();
    let mut tightest: Option<LemmaPair> = None;
    let mut checked = 0;
    for fe in &eps {
        let ia = a.layout.column(fe.feature).expect("shared");
        let ib = b.layout.column(fe.feature).expect("shared");
        let e = fe.get(variant);
        for y in 0..a.num_classes {
            let gap = (a.weight(y, ia) - b.weight(y, ib)).abs();
            let bound = e / reg_lambda + s;
            let pair = LemmaPair {
                class: y,
                feature: fe.feature,
                weight_gap: gap,
                epsilon: e,
                bound,
                margin: bound - gap,
            };
            checked += 1;
            if pair.margin < 0.0 {
                violations.push(pair.clone());
            }
            if tightest.as_ref().map_or(true, |t| pair.margin < t.margin) {
                tightest = Some(pair);
            }
        }
    }
    Ok(LemmaReport {
        reg_lambda,
        variant,
        slack: s,
        pairs_checked: checked,
        pass: violations.is_empty(),
        violations,
        tightest: tightest.expect("at least one shared feature"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDeviation {
    pub global: u32,
    pub local: u32,
    pub class: usize,
    pub full: f64,
    pub product: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub reg_lambda: f64,
    pub variant: BoundVariant,
    /// Max over shared features of both comparisons (full vs global-only,
    /// full vs local-only).
    pub epsilon: f64,
    /// `k(ε + 2·tol)/λ`; the bound is `e^exponent − 1`.
    pub exponent: f64,
    /// `None` when `e^exponent` overflows; the bound is then vacuous.
    pub bound: Option<f64>,
    pub max_deviation: f64,
    pub worst: PairDeviation,
    pub surprising_pairs: usize,
    pub pass: bool,
    pub lemma_global: LemmaReport,
    pub lemma_local: LemmaReport,
}

/// The three models trained on one task at one `λ`.
#[derive(Debug, Clone)]
pub struct TrainedTriple {
    pub full: LogLinearModel,
    pub global_only: LogLinearModel,
    pub local_only: LogLinearModel,
}

pub fn train_triple(task: &SyntheticTask, reg_lambda: f64, tol: f64) -> Result<TrainedTriple> {
    let train = |subset| {
        train_subset(
            &task.train,
            task.num_global,
            task.num_local,
            task.num_classes,
            subset,
            reg_lambda,
            tol,
        )
    };
    Ok(TrainedTriple {
        full: train(FeatureSubset::Full)?,
        global_only: train(FeatureSubset::GlobalOnly)?,
        local_only: train(FeatureSubset::LocalOnly)?,
    })
}

/// `p̃×(· | g, l) ∝ p(· | g; θ_global) · p(· | l; θ_local)`.
pub fn product_estimate(triple: &TrainedTriple, g: u32, l: u32) -> Result<Vec<f64>> {
    let pg = triple.global_only.predict(g, l)?;
    let pl = triple.local_only.predict(g, l)?;
    let w: Vec<f64> = pg.iter().zip(&pl).map(|(a, b)| a * b).collect();
    let s: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / s).collect())
}

/// Trains the three models and checks the proposition for every class and
/// surprising pair.
pub fn verify_proposition(task: &SyntheticTask, reg_lambda: f64, tol: f64) -> Result<PropositionReport> {
    let triple = train_triple(task, reg_lambda, tol)?;
    check_proposition(task, &triple, reg_lambda, tol, BoundVariant::STATED)
}

/// Proposition check against already trained models under any bound variant.
pub fn check_proposition(
    task: &SyntheticTask,
    triple: &TrainedTriple,
    reg_lambda: f64,
    tol: f64,
    variant: BoundVariant,
) -> Result<PropositionReport> {
    if task.surprising.is_empty() {
        return Err(TheoryError::NoSurprisingPairs);
    }
    let lemma_global = verify_lemma(&triple.full, &triple.global_only, &task.train, reg_lambda, tol, variant.epsilon)?;
    let lemma_local = verify_lemma(&triple.full, &triple.local_only, &task.train, reg_lambda, tol, variant.epsilon)?;
    let eps_g = measure_epsilon(&triple.full, &triple.global_only, &task.train)?;
    let eps_l = measure_epsilon(&triple.full, &triple.local_only, &task.train)?;
    let epsilon = eps_g
        .iter()
        .chain(&eps_l)
        .map(|e| e.get(variant.epsilon))
        .fold(0.0, f64::max);
    let exponent = variant.exponent * (epsilon + 2.0 * tol) / reg_lambda;
    let bound = Some(exponent.exp_m1()).filter(|b| b.is_finite());

    let mut worst: Option<PairDeviation> = None;
    for &(g, l) in &task.surprising {
        let full = triple.full.predict(g, l)?;
        let prod = product_estimate(triple, g, l)?;
        for (y, (&f, &p)) in full.iter().zip(&prod).enumerate() {
            let d = PairDeviation {
                global: g,
                local: l,
                class: y,
                full: f,
                product: p,
                deviation: (f - p).abs(),
            };
            if worst.as_ref().map_or(true, |w| d.deviation > w.deviation) {
                worst = Some(d);
            }
        }
    }
    let worst = worst.expect("nonempty surprising set");
    let pass = bound.map_or(true, |b| worst.deviation <= b);
    Ok(PropositionReport {
        reg_lambda,
        variant,
        epsilon,
        exponent,
        bound,
        max_deviation: worst.deviation,
        worst,
        surprising_pairs: task.surprising.len(),
        pass,
        lemma_global,
        lemma_local,
    })
}

/// One row of a sweep: a task seed at one `λ` under one bound variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub task_seed: u64,
    pub lambda: f64,
    pub variant: String,
    pub epsilon: f64,
    pub exponent: f64,
    pub bound: Option<f64>,
    pub max_deviation: f64,
    pub lemma_pass: bool,
    pub proposition_pass: bool,
    pub pass: bool,
}

impl TrialSummary {
    pub fn from_report(task_seed: u64, r: &PropositionReport) -> Self {
        let lemma_pass = r.lemma_global.pass && r.lemma_local.pass;
        Self {
            task_seed,
            lambda: r.reg_lambda,
            variant: r.variant.name(),
            epsilon: r.epsilon,
            exponent: r.exponent,
            bound: r.bound,
            max_deviation: r.max_deviation,
            lemma_pass,
            proposition_pass: r.pass,
            pass: lemma_pass && r.pass,
        }
    }
}

pub fn write_summary_csv<W: Write>(mut w: W, rows: &[TrialSummary]) -> std::io::Result<()> {
    writeln!(
        w,
        "task_seed,lambda,variant,epsilon,exponent,bound,max_deviation,lemma_pass,proposition_pass,pass"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.9e},{:.9e},{},{:.9e},{},{},{}",
            r.task_seed,
            r.lambda,
            r.variant,
            r.epsilon,
            r.exponent,
            r.bound.map_or("inf".to_string(), |b| format!("{b:.9e}")),
            r.max_deviation,
            r.lemma_pass,
            r.proposition_pass,
            r.pass
        )?;
    }
    Ok(())
}
