//! Distances between predictive distributions and the multi-hypothesis
//! evaluation harness.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dist::CategoricalDist;
use crate::error::{Error, Result};
use crate::hypotheses::{
    fit_lambda, Family, FitCase, Hypothesis, InterpolationParams, Predictors, TieMode, DEFAULT_GRID_STEP,
    DEFAULT_GRID_STEP_2D,
};
use crate::model::NextTokenModel;
use crate::seq::SurprisingContext;

fn check_support(p: &CategoricalDist, q: &CategoricalDist) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// Total variation distance `½‖p − q‖₁`.
pub fn tv_distance(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    check_support(p, q)?;
    let d: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
    Ok((0.5 * d).clamp(0.0, 1.0))
}

/// Jensen–Shannon divergence in bits.
pub fn jsd(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    check_support(p, q)?;
    let mut total = 0.0;
    for (&a, &b) in p.probs().iter().zip(q.probs()) {
        let m = 0.5 * (a + b);
        if a > 0.0 {
            total += 0.5 * a * (a / m).log2();
        }
        if b > 0.0 {
            total += 0.5 * b * (b / m).log2();
        }
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Which distance `err` averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Tv,
    Jsd,
}

impl Metric {
    pub fn distance(self, p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
        match self {
            Metric::Tv => tv_distance(p, q),
            Metric::Jsd => jsd(p, q),
        }
    }
}

/// Mean distance between the model's prediction after `X_G ‖ X_L` and the
/// hypothesis prediction, over contexts.
pub fn err(
    hyp: &Hypothesis,
    predictors: &Predictors<'_>,
    lm: &dyn NextTokenModel,
    contexts: &[SurprisingContext],
) -> Result<f64> {
    if contexts.is_empty() {
        return Err(Error::InvalidConfig("err needs at least one context".into()));
    }
    let mut total = 0.0;
    for ctx in contexts {
        let target = lm.next_dist(&ctx.full_context())?;
        total += tv_distance(&target, &predictors.predict(hyp, ctx, lm)?)?;
    }
    Ok(total / contexts.len() as f64)
}

/// `1 − err`.
pub fn acc(
    hyp: &Hypothesis,
    predictors: &Predictors<'_>,
    lm: &dyn NextTokenModel,
    contexts: &[SurprisingContext],
) -> Result<f64> {
    Ok(1.0 - err(hyp, predictors, lm, contexts)?)
}

/// Mean of distances; the `err` of a set of per-context distances.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1); zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub language: String,
    pub arch: String,
    pub noise: String,
    pub num_contexts: usize,
    pub seeds: Vec<u64>,
    pub local_source: String,
    pub global_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub acc: f64,
    /// Accuracy under Jensen–Shannon divergence instead of TV.
    pub acc_jsd: f64,
    /// Per-context TV distances, in context order.
    pub distances: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted: Option<InterpolationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisRow {
    pub hypothesis: String,
    pub definition: Hypothesis,
    pub per_seed: Vec<SeedResult>,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_acc_jsd: f64,
    /// Seeds for which this hypothesis could not be evaluated. A row with
    /// failures is partial: its means cover only `per_seed`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<SeedFailure>,
}

impl HypothesisRow {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// Accuracy of complementary log-linear interpolation at each `λ₁`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub seed: u64,
    pub lambda1: Vec<f64>,
    pub acc: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub meta: ReportMeta,
    pub rows: Vec<HypothesisRow>,
    #[serde(default)]
    pub sweeps: Vec<SweepCurve>,
}

impl HypothesisReport {
    pub fn row(&self, label: &str) -> Option<&HypothesisRow> {
        self.rows.iter().find(|r| r.hypothesis == label)
    }

    /// Checks that stored accuracies reproduce from stored distances.
    pub fn check_consistency(&self) -> Result<()> {
        for row in &self.rows {
            for s in &row.per_seed {
                if s.distances.len() != self.meta.num_contexts {
                    return Err(Error::Invariant(format!(
                        "{} seed {}: {} distances for {} contexts",
                        row.hypothesis,
                        s.seed,
                        s.distances.len(),
                        self.meta.num_contexts
                    )));
                }
                if s.distances.iter().any(|d| !(0.0..=1.0).contains(d)) {
                    return Err(Error::Invariant(format!("{}: distance outside [0, 1]", row.hypothesis)));
                }
                if (1.0 - mean(&s.distances) - s.acc).abs() > 1e-12 {
                    return Err(Error::Invariant(format!(
                        "{} seed {}: acc does not match distances",
                        row.hypothesis, s.seed
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of adjacent transpositions (Kendall distance) between the
    /// hypothesis rankings under TV and under JSD.
    pub fn tv_jsd_rank_distance(&self) -> usize {
        let order = |key: fn(&HypothesisRow) -> f64| {
            let mut idx: Vec<usize> = (0..self.rows.len()).collect();
            idx.sort_by(|&a, &b| key(&self.rows[b]).total_cmp(&key(&self.rows[a])).then(a.cmp(&b)));
            idx
        };
        let tv = order(|r| r.mean_acc);
        let js = order(|r| r.mean_acc_jsd);
        let pos: Vec<usize> = {
            let mut p = vec![0; js.len()];
            for (i, &r) in js.iter().enumerate() {
                p[r] = i;
            }
            p
        };
        let ranks: Vec<usize> = tv.iter().map(|&r| pos[r]).collect();
        let mut inversions = 0;
        for i in 0..ranks.len() {
            for j in i + 1..ranks.len() {
                if ranks[i] > ranks[j] {
                    inversions += 1;
                }
            }
        }
        inversions
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Flat rows: `language,arch,noise,hypothesis,seed,acc`.
    pub fn write_csv<W: Write>(&self, mut w: W, header: bool) -> Result<()> {
        if header {
            writeln!(w, "language,arch,noise,hypothesis,seed,acc")?;
        }
        for row in &self.rows {
            for s in &row.per_seed {
                writeln!(
                    w,
                    "{},{},{},{},{},{:.9}",
                    self.meta.language, self.meta.arch, self.meta.noise, row.hypothesis, s.seed, s.acc
                )?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub grid_step: f64,
    pub grid_step_2d: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            grid_step: DEFAULT_GRID_STEP,
            grid_step_2d: DEFAULT_GRID_STEP_2D,
        }
    }
}

/// Identifying fields of a suite run; `num_contexts`, `seeds` and sources
/// are filled in by [`evaluate_suite`].
#[derive(Debug, Clone, Default)]
pub struct SuiteLabels {
    pub language: String,
    pub arch: String,
    pub noise: String,
}

/// One evaluated model and, optionally, the independently trained model
/// that serves as its restart.
#[derive(Clone, Copy)]
pub struct SuiteModel<'a> {
    pub seed: u64,
    pub lm: &'a dyn NextTokenModel,
    pub restart: Option<&'a dyn NextTokenModel>,
}

impl<'a> SuiteModel<'a> {
    pub fn new(seed: u64, lm: &'a dyn NextTokenModel) -> Self {
        Self { seed, lm, restart: None }
    }

    /// Pairs each model with the next one in the list (cyclically) as its
    /// restart. A single model gets none.
    pub fn paired(models: &[(u64, &'a dyn NextTokenModel)]) -> Vec<Self> {
        let n = models.len();
        models
            .iter()
            .enumerate()
            .map(|(i, &(seed, lm))| Self {
                seed,
                lm,
                restart: (n > 1).then(|| models[(i + 1) % n].1),
            })
            .collect()
    }
}

/// Evaluates every hypothesis against every seed model on a shared set of
/// contexts. Interpolations without fixed parameters are fitted per seed on
/// the contexts themselves; the complementary log-linear fit also yields
/// the `λ₁` sweep. A model's own restart takes precedence over the one in
/// `predictors`.
pub fn evaluate_suite(
    models: &[SuiteModel<'_>],
    contexts: &[SurprisingContext],
    hypotheses: &[Hypothesis],
    predictors: &Predictors<'_>,
    options: SuiteOptions,
    labels: SuiteLabels,
) -> Result<HypothesisReport> {
    if contexts.is_empty() {
        return Err(Error::InvalidConfig("suite needs at least one context".into()));
    }
    if hypotheses.is_empty() {
        return Err(Error::InvalidConfig("suite needs at least one hypothesis".into()));
    }
    if models.is_empty() {
        return Err(Error::InvalidConfig("suite needs at least one model".into()));
    }
    for h in hypotheses {
        h.validate()?;
    }

    // Base estimates do not depend on the evaluated model.
    let locals: Vec<Result<CategoricalDist>> = contexts
        .iter()
        .map(|c| predictors.predict(&Hypothesis::Local, c, models[0].lm))
        .collect();
    let globals: Vec<Result<CategoricalDist>> = contexts
        .iter()
        .map(|c| predictors.predict(&Hypothesis::Global, c, models[0].lm))
        .collect();

    let mut rows: Vec<HypothesisRow> = hypotheses
        .iter()
        .map(|h| HypothesisRow {
            hypothesis: h.label(),
            definition: h.clone(),
            per_seed: Vec::new(),
            mean_acc: 0.0,
            std_acc: 0.0,
            mean_acc_jsd: 0.0,
            failures: Vec::new(),
        })
        .collect();
    let mut sweeps = Vec::new();

    for m in models {
        let (seed, lm) = (m.seed, m.lm);
        let restart = m.restart.or(predictors.restart);
        let targets = contexts
            .iter()
            .map(|c| lm.next_dist(&c.full_context()))
            .collect::<Result<Vec<_>>>()?;

        for (hyp, row) in hypotheses.iter().zip(rows.iter_mut()) {
            let outcome = match hyp {
                Hypothesis::InterpLinear { params: None } => {
                    fit_cases(&locals, &globals, &targets).and_then(|cases| {
                        fit_lambda(Family::Linear, TieMode::Free, &cases, options.grid_step, options.grid_step_2d)
                            .map(|fit| (cases, fit))
                    })
                    .and_then(|(cases, fit)| score_fitted(seed, &cases, fit.params))
                }
                Hypothesis::InterpLoglinear {
                    tie_mode,
                    params: None,
                } => fit_cases(&locals, &globals, &targets)
                    .and_then(|cases| {
                        fit_lambda(Family::Loglinear, *tie_mode, &cases, options.grid_step, options.grid_step_2d)
                            .map(|fit| (cases, fit))
                    })
                    .and_then(|(cases, fit)| {
                        if *tie_mode == TieMode::Complementary {
                            sweeps.push(SweepCurve {
                                seed,
                                lambda1: fit
                                    .curve
                                    .iter()
                                    .map(|(p, _)| match p {
                                        InterpolationParams::Loglinear { lambda1, .. } => *lambda1,
                                        InterpolationParams::Linear { lambda } => *lambda,
                                    })
                                    .collect(),
                                acc: fit.curve.iter().map(|(_, e)| 1.0 - e).collect(),
                            });
                        }
                        score_fitted(seed, &cases, fit.params)
                    }),
                Hypothesis::Restart => score_restart(seed, restart, contexts, &targets),
                _ => score_fixed(seed, hyp, predictors, lm, contexts, &locals, &globals, &targets),
            };
            match outcome {
                Ok(r) => row.per_seed.push(r),
                Err(e) => row.failures.push(SeedFailure {
                    seed,
                    message: e.to_string(),
                }),
            }
        }
    }

    for row in &mut rows {
        let accs: Vec<f64> = row.per_seed.iter().map(|s| s.acc).collect();
        let accs_jsd: Vec<f64> = row.per_seed.iter().map(|s| s.acc_jsd).collect();
        if !accs.is_empty() {
            row.mean_acc = mean(&accs);
            row.std_acc = sample_std(&accs);
            row.mean_acc_jsd = mean(&accs_jsd);
        }
    }

    Ok(HypothesisReport {
        meta: ReportMeta {
            language: labels.language,
            arch: labels.arch,
            noise: labels.noise,
            num_contexts: contexts.len(),
            seeds: models.iter().map(|m| m.seed).collect(),
            local_source: predictors.local.name().into(),
            global_source: predictors.global.name().into(),
        },
        rows,
        sweeps,
    })
}

fn fit_cases(
    locals: &[Result<CategoricalDist>],
    globals: &[Result<CategoricalDist>],
    targets: &[CategoricalDist],
) -> Result<Vec<FitCase>> {
    locals
        .iter()
        .zip(globals)
        .zip(targets)
        .map(|((l, g), t)| {
            Ok(FitCase {
                local: clone_result(l)?,
                global: clone_result(g)?,
                target: t.clone(),
            })
        })
        .collect()
}

fn clone_result(r: &Result<CategoricalDist>) -> Result<CategoricalDist> {
    match r {
        Ok(d) => Ok(d.clone()),
        Err(e) => Err(Error::Model(format!("base estimate unavailable: {e}"))),
    }
}

fn score(seed: u64, preds: &[CategoricalDist], targets: &[&CategoricalDist], fitted: Option<InterpolationParams>) -> Result<SeedResult> {
    let mut distances = Vec::with_capacity(preds.len());
    let mut jsds = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        distances.push(tv_distance(t, p)?);
        jsds.push(jsd(t, p)?);
    }
    Ok(SeedResult {
        seed,
        acc: 1.0 - mean(&distances),
        acc_jsd: 1.0 - mean(&jsds),
        distances,
        fitted,
    })
}

fn score_fitted(seed: u64, cases: &[FitCase], params: InterpolationParams) -> Result<SeedResult> {
    let preds = cases
        .iter()
        .map(|c| params.apply(&c.local, &c.global))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<&CategoricalDist> = cases.iter().map(|c| &c.target).collect();
    score(seed, &preds, &targets, Some(params))
}

#[allow(clippy::too_many_arguments)]
fn score_restart(
    seed: u64,
    restart: Option<&dyn NextTokenModel>,
    contexts: &[SurprisingContext],
    targets: &[CategoricalDist],
) -> Result<SeedResult> {
    let r = restart.ok_or(Error::MissingSource {
        hypothesis: Hypothesis::Restart.label(),
        missing: "restart model",
    })?;
    let preds = contexts
        .iter()
        .map(|c| r.next_dist(&c.full_context()))
        .collect::<Result<Vec<_>>>()?;
    score(seed, &preds, &targets.iter().collect::<Vec<_>>(), None)
}

fn score_fixed(
    seed: u64,
    hyp: &Hypothesis,
    predictors: &Predictors<'_>,
    lm: &dyn NextTokenModel,
    contexts: &[SurprisingContext],
    locals: &[Result<CategoricalDist>],
    globals: &[Result<CategoricalDist>],
    targets: &[CategoricalDist],
) -> Result<SeedResult> {
    let preds = contexts
        .iter()
        .enumerate()
        .map(|(i, c)| match hyp {
            Hypothesis::Local => clone_result(&locals[i]),
            Hypothesis::Global => clone_result(&globals[i]),
            Hypothesis::InterpLinear { params: Some(p) } | Hypothesis::InterpLoglinear { params: Some(p), .. } => {
                p.apply(&clone_result(&locals[i])?, &clone_result(&globals[i])?)
            }
            _ => predictors.predict(hyp, c, lm),
        })
        .collect::<Result<Vec<_>>>()?;
    let fitted = match hyp {
        Hypothesis::InterpLinear { params } | Hypothesis::InterpLoglinear { params, .. } => *params,
        _ => None,
    };
    score(seed, &preds, &targets.iter().collect::<Vec<_>>(), fitted)
}
