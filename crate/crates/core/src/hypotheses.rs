//! Candidate predictors of a model's behavior in surprising contexts, and
//! grid search for interpolation weights.

use serde::{Deserialize, Serialize};

use crate::automata::{self, Dfa};
use crate::corpus::{self, CountTable};
use crate::dist::CategoricalDist;
use crate::error::{Error, Result};
use crate::eval::tv_distance;
use crate::model::NextTokenModel;
use crate::seq::{SurprisingContext, Symbol};

/// Floor applied to probabilities before log-linear exponentiation.
pub const LOGLINEAR_FLOOR: f64 = 1e-10;

/// Default beam width for the model-based global estimate.
pub const DEFAULT_BEAM_WIDTH: usize = 15;

pub const DEFAULT_GRID_STEP: f64 = 0.01;
pub const DEFAULT_GRID_STEP_2D: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieMode {
    /// λ₁ and λ₂ searched independently.
    Free,
    /// λ₂ = 1 − λ₁.
    Complementary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Loglinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum InterpolationParams {
    /// `λ·p_local + (1−λ)·p_global`.
    Linear { lambda: f64 },
    /// `∝ p_global^λ₁ · p_local^λ₂`.
    Loglinear {
        lambda1: f64,
        lambda2: f64,
        tie_mode: TieMode,
    },
}

impl InterpolationParams {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")))
            }
        };
        match *self {
            Self::Linear { lambda } => in_unit("lambda", lambda),
            Self::Loglinear {
                lambda1,
                lambda2,
                tie_mode,
            } => {
                in_unit("lambda1", lambda1)?;
                in_unit("lambda2", lambda2)?;
                if tie_mode == TieMode::Complementary && (lambda1 + lambda2 - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidConfig(format!(
                        "complementary weights must sum to 1, got {lambda1} + {lambda2}"
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, local: &CategoricalDist, global: &CategoricalDist) -> Result<CategoricalDist> {
        match *self {
            Self::Linear { lambda } => interp_linear(local, global, lambda),
            Self::Loglinear { lambda1, lambda2, .. } => interp_loglinear(local, global, lambda1, lambda2),
        }
    }
}

/// A hypothesis as named in experiment configs and reports. Interpolations
/// with `params: None` are fitted on the evaluation contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Hypothesis {
    Unigram,
    Local,
    Global,
    Ignore,
    InterpLinear {
        #[serde(default)]
        params: Option<InterpolationParams>,
    },
    InterpLoglinear {
        #[serde(default = "complementary")]
        tie_mode: TieMode,
        #[serde(default)]
        params: Option<InterpolationParams>,
    },
    Restart,
}

fn complementary() -> TieMode {
    TieMode::Complementary
}

impl Hypothesis {
    /// Short stable label used in reports and plots.
    pub fn label(&self) -> String {
        match self {
            Self::Unigram => "unigram".into(),
            Self::Local => "local".into(),
            Self::Global => "global".into(),
            Self::Ignore => "ignore".into(),
            Self::InterpLinear { .. } => "interp_linear".into(),
            Self::InterpLoglinear { tie_mode, .. } => match tie_mode {
                TieMode::Complementary => "interp_loglinear".into(),
                TieMode::Free => "interp_loglinear_free".into(),
            },
            Self::Restart => "restart".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::InterpLinear { params: Some(p) } => match p {
                InterpolationParams::Linear { .. } => p.validate(),
                _ => Err(Error::InvalidConfig("interp_linear needs linear params".into())),
            },
            Self::InterpLoglinear {
                tie_mode,
                params: Some(p),
            } => match p {
                InterpolationParams::Loglinear { tie_mode: t, .. } if t == tie_mode => p.validate(),
                _ => Err(Error::InvalidConfig(
                    "interp_loglinear needs loglinear params with a matching tie_mode".into(),
                )),
            },
            _ => Ok(()),
        }
    }

    /// The default regular-language suite.
    pub fn standard_suite() -> Vec<Hypothesis> {
        vec![
            Self::Unigram,
            Self::Local,
            Self::Global,
            Self::Ignore,
            Self::InterpLinear { params: None },
            Self::InterpLoglinear {
                tie_mode: TieMode::Complementary,
                params: None,
            },
            Self::InterpLoglinear {
                tie_mode: TieMode::Free,
                params: None,
            },
            Self::Restart,
        ]
    }
}

/// Where the local-context estimate comes from.
pub enum LocalSource<'a> {
    DfaExact { dfa: &'a Dfa, occupancy: Vec<f64> },
    BigramCounts(&'a CountTable),
}

impl<'a> LocalSource<'a> {
    pub fn dfa(dfa: &'a Dfa) -> Result<Self> {
        Ok(Self::DfaExact {
            dfa,
            occupancy: automata::occupancy_measure(dfa)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::DfaExact { .. } => "dfa_exact",
            Self::BigramCounts(_) => "bigram_counts",
        }
    }
}

/// Where the global-context estimate comes from.
pub enum GlobalSource<'a> {
    DfaExact(&'a Dfa),
    /// One step of beam search in a separately trained helper model.
    BeamLm {
        helper: &'a dyn NextTokenModel,
        beam_width: usize,
    },
}

impl GlobalSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DfaExact(_) => "dfa_exact",
            Self::BeamLm { .. } => "beam_lm",
        }
    }
}

/// `p̃_local(· | X_L)`; ignores `X_G` entirely.
pub fn hyp_local(ctx: &SurprisingContext, source: &LocalSource<'_>) -> Result<CategoricalDist> {
    match source {
        LocalSource::DfaExact { dfa, occupancy } => {
            automata::ground_truth_local_with(dfa, occupancy, ctx.local_token)
        }
        LocalSource::BigramCounts(counts) => corpus::bigram_dist(counts, ctx.local_token),
    }
}

/// `p̃_global(· | X_G)`; ignores `X_L` entirely.
pub fn hyp_global(ctx: &SurprisingContext, source: &GlobalSource<'_>) -> Result<CategoricalDist> {
    match source {
        GlobalSource::DfaExact(dfa) => automata::ground_truth_global(dfa, &ctx.global_ctx),
        GlobalSource::BeamLm { helper, beam_width } => beam_global(*helper, &ctx.global_ctx, *beam_width),
    }
}

/// `Σᵢ p(vᵢ|X_G)·p(·|X_G, vᵢ)` over the `beam_width` most probable non-EOS
/// tokens `vᵢ`, renormalized by `Σᵢ p(vᵢ|X_G)`. Ties go to lower ids.
pub fn beam_global<M: NextTokenModel + ?Sized>(
    helper: &M,
    global_ctx: &[Symbol],
    beam_width: usize,
) -> Result<CategoricalDist> {
    if beam_width == 0 {
        return Err(Error::InvalidConfig("beam width must be at least 1".into()));
    }
    let first = helper.next_dist(global_ctx)?;
    let vocab = helper.vocab_size();
    let mut order: Vec<Symbol> = (0..vocab as Symbol).collect();
    order.sort_by(|&a, &b| {
        first
            .prob(b as usize)
            .total_cmp(&first.prob(a as usize))
            .then(a.cmp(&b))
    });
    order.truncate(beam_width);

    let seconds = helper.next_dists_after(global_ctx, &order)?;
    let mut acc = vec![0.0; vocab + 1];
    for (&v, second) in order.iter().zip(&seconds) {
        let w = first.prob(v as usize);
        for (a, p) in acc.iter_mut().zip(second.probs()) {
            *a += w * p;
        }
    }
    CategoricalDist::from_weights(acc)
}

/// Context-independent marginal.
pub fn hyp_unigram(counts: &CountTable) -> Result<CategoricalDist> {
    corpus::unigram_dist(counts)
}

/// The model's own prediction just before the surprising token.
pub fn hyp_ignore<M: NextTokenModel + ?Sized>(lm: &M, ctx: &SurprisingContext) -> Result<CategoricalDist> {
    lm.next_dist(&ctx.global_ctx)
}

fn check_pair(a: &CategoricalDist, b: &CategoricalDist) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::SupportMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// `λ·p_local + (1−λ)·p_global`.
pub fn interp_linear(local: &CategoricalDist, global: &CategoricalDist, lambda: f64) -> Result<CategoricalDist> {
    check_pair(local, global)?;
    InterpolationParams::Linear { lambda }.validate()?;
    if lambda == 1.0 {
        return Ok(local.clone());
    }
    if lambda == 0.0 {
        return Ok(global.clone());
    }
    CategoricalDist::from_weights(
        local
            .probs()
            .iter()
            .zip(global.probs())
            .map(|(l, g)| lambda * l + (1.0 - lambda) * g)
            .collect(),
    )
}

/// Renormalized `p_global^λ₁ · p_local^λ₂`, with probabilities floored at
/// [`LOGLINEAR_FLOOR`] before exponentiation. A factor with weight 0 drops
/// out exactly, so `(0, 1)` and `(1, 0)` return the base distributions
/// unchanged.
pub fn interp_loglinear(
    local: &CategoricalDist,
    global: &CategoricalDist,
    lambda1: f64,
    lambda2: f64,
) -> Result<CategoricalDist> {
    interp_loglinear_floored(local, global, lambda1, lambda2, LOGLINEAR_FLOOR)
}

pub(crate) fn interp_loglinear_floored(
    local: &CategoricalDist,
    global: &CategoricalDist,
    lambda1: f64,
    lambda2: f64,
    floor: f64,
) -> Result<CategoricalDist> {
    check_pair(local, global)?;
    for (name, v) in [("lambda1", lambda1), ("lambda2", lambda2)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
        }
    }
    match (lambda1, lambda2) {
        (0.0, 1.0) => return Ok(local.clone()),
        (1.0, 0.0) => return Ok(global.clone()),
        (0.0, 0.0) => return Ok(CategoricalDist::uniform(local.len())),
        _ => {}
    }
    let logw: Vec<f64> = local
        .probs()
        .iter()
        .zip(global.probs())
        .map(|(&l, &g)| {
            let mut s = 0.0;
            if lambda1 != 0.0 {
                s += lambda1 * g.max(floor).ln();
            }
            if lambda2 != 0.0 {
                s += lambda2 * l.max(floor).ln();
            }
            s
        })
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    CategoricalDist::from_weights(logw.iter().map(|w| (w - max).exp()).collect())
}

/// Base distributions for one context, plus the distribution being explained.
#[derive(Debug, Clone)]
pub struct FitCase {
    pub local: CategoricalDist,
    pub global: CategoricalDist,
    pub target: CategoricalDist,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: InterpolationParams,
    /// Mean TV error at the optimum.
    pub error: f64,
    pub accuracy: f64,
    /// Error at every grid point, in search order.
    pub curve: Vec<(InterpolationParams, f64)>,
}

/// Evenly spaced points `0, step, …, 1` with exact endpoints.
pub fn grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidConfig(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

/// Mean TV distance between `params` applied to each case and its target.
pub fn mean_error(params: &InterpolationParams, cases: &[FitCase]) -> Result<f64> {
    let mut total = 0.0;
    for c in cases {
        total += tv_distance(&params.apply(&c.local, &c.global)?, &c.target)?;
    }
    Ok(total / cases.len() as f64)
}

/// Exhaustive grid search for the interpolation weights minimizing mean TV
/// error. 1-D for linear and complementary log-linear (`grid_step`), 2-D
/// for free log-linear (`grid_step_2d`). Grid points are visited in
/// ascending order and only strict improvements replace the incumbent, so
/// ties resolve toward smaller weights.
pub fn fit_lambda(
    family: Family,
    tie_mode: TieMode,
    cases: &[FitCase],
    grid_step: f64,
    grid_step_2d: f64,
) -> Result<FitResult> {
    if cases.is_empty() {
        return Err(Error::InvalidConfig("fit_lambda needs at least one context".into()));
    }
    let candidates: Vec<InterpolationParams> = match (family, tie_mode) {
        (Family::Linear, _) => grid(grid_step)?
            .into_iter()
            .map(|lambda| InterpolationParams::Linear { lambda })
            .collect(),
        (Family::Loglinear, TieMode::Complementary) => grid(grid_step)?
            .into_iter()
            .map(|l1| InterpolationParams::Loglinear {
                lambda1: l1,
                lambda2: 1.0 - l1,
                tie_mode,
            })
            .collect(),
        (Family::Loglinear, TieMode::Free) => {
            let g = grid(grid_step_2d)?;
            g.iter()
                .flat_map(|&l1| {
                    g.iter().map(move |&l2| InterpolationParams::Loglinear {
                        lambda1: l1,
                        lambda2: l2,
                        tie_mode,
                    })
                })
                .collect()
        }
    };

    let mut curve = Vec::with_capacity(candidates.len());
    let mut best: Option<(InterpolationParams, f64)> = None;
    for params in candidates {
        let err = mean_error(&params, cases)?;
        if best.is_none_or(|(_, e)| err < e) {
            best = Some((params, err));
        }
        curve.push((params, err));
    }
    let (params, error) = best.expect("grid is nonempty");
    Ok(FitResult {
        params,
        error,
        accuracy: 1.0 - error,
        curve,
    })
}

/// Everything needed to evaluate any [`Hypothesis`] on a context.
pub struct Predictors<'a> {
    pub local: LocalSource<'a>,
    pub global: GlobalSource<'a>,
    pub unigram: CategoricalDist,
    pub restart: Option<&'a dyn NextTokenModel>,
}

impl Predictors<'_> {
    /// Evaluates a hypothesis with fixed (or given) parameters. Fitted
    /// interpolations are handled by the evaluation harness.
    pub fn predict(
        &self,
        hyp: &Hypothesis,
        ctx: &SurprisingContext,
        lm: &dyn NextTokenModel,
    ) -> Result<CategoricalDist> {
        match hyp {
            Hypothesis::Unigram => Ok(self.unigram.clone()),
            Hypothesis::Local => hyp_local(ctx, &self.local),
            Hypothesis::Global => hyp_global(ctx, &self.global),
            Hypothesis::Ignore => hyp_ignore(lm, ctx),
            Hypothesis::Restart => match self.restart {
                Some(r) => r.next_dist(&ctx.full_context()),
                None => Err(Error::MissingSource {
                    hypothesis: hyp.label(),
                    missing: "restart model",
                }),
            },
            Hypothesis::InterpLinear { params: Some(p) }
            | Hypothesis::InterpLoglinear { params: Some(p), .. } => {
                p.apply(&hyp_local(ctx, &self.local)?, &hyp_global(ctx, &self.global)?)
            }
            Hypothesis::InterpLinear { params: None } | Hypothesis::InterpLoglinear { params: None, .. } => {
                Err(Error::InvalidConfig(format!(
                    "{} has no parameters; fit it first",
                    hyp.label()
                )))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::count_corpus;
    use crate::seq::TokenSeq;

    fn d(p: &[f64]) -> CategoricalDist {
        CategoricalDist::new(p.to_vec()).unwrap()
    }

    fn ctx(g: &[Symbol], l: Symbol) -> SurprisingContext {
        SurprisingContext {
            global_ctx: g.to_vec(),
            local_token: l,
            epsilon: 0.1,
            tau: 0.1,
        }
    }

    #[test]
    fn linear_endpoints_and_midpoint() {
        let l = d(&[1.0, 0.0]);
        let g = d(&[0.0, 1.0]);
        assert_eq!(interp_linear(&l, &g, 1.0).unwrap(), l);
        assert_eq!(interp_linear(&l, &g, 0.0).unwrap(), g);
        assert_eq!(interp_linear(&l, &g, 0.5).unwrap().probs(), &[0.5, 0.5]);
        assert!(interp_linear(&l, &g, 1.5).is_err());
        assert!(interp_linear(&l, &d(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn loglinear_cases() {
        let l = d(&[0.8, 0.2]);
        let g = d(&[0.2, 0.8]);
        let both = interp_loglinear(&l, &g, 1.0, 1.0).unwrap();
        assert!((both.prob(0) - 0.5).abs() < 1e-12);
        assert_eq!(interp_loglinear(&l, &g, 0.0, 1.0).unwrap(), l);
        assert_eq!(interp_loglinear(&l, &g, 1.0, 0.0).unwrap(), g);

        let sparse = d(&[0.5, 0.5, 0.0]);
        let uniform = CategoricalDist::uniform(3);
        let r = interp_loglinear(&sparse, &uniform, 1.0, 1.0).unwrap();
        assert!(tv_distance(&r, &sparse).unwrap() < 1e-8);
        assert!((r.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn floor_is_immaterial_for_dense_inputs() {
        let l = d(&[0.3, 0.3, 0.4]);
        let g = d(&[0.1, 0.6, 0.3]);
        for (a, b) in [(0.3, 0.7), (0.5, 0.5), (1.0, 1.0), (0.2, 0.9)] {
            let floored = interp_loglinear(&l, &g, a, b).unwrap();
            let raw = interp_loglinear_floored(&l, &g, a, b, 0.0).unwrap();
            assert!(tv_distance(&floored, &raw).unwrap() < 1e-6);
        }
    }

    #[test]
    fn bigram_local_and_independence() {
        let counts = count_corpus(&[TokenSeq::new(vec![0, 1], false)], 3).unwrap();
        let src = LocalSource::BigramCounts(&counts);
        assert_eq!(hyp_local(&ctx(&[2], 0), &src).unwrap().probs(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(
            hyp_local(&ctx(&[2, 2, 1], 0), &src).unwrap(),
            hyp_local(&ctx(&[], 0), &src).unwrap()
        );
    }

    /// Next-token distribution depends only on the last symbol.
    struct Markov {
        table: Vec<Vec<f64>>,
        start: Vec<f64>,
    }

    impl NextTokenModel for Markov {
        fn vocab_size(&self) -> usize {
            self.start.len() - 1
        }
        fn next_dist(&self, c: &[Symbol]) -> Result<CategoricalDist> {
            let p = match c.last() {
                Some(&t) => self.table[t as usize].clone(),
                None => self.start.clone(),
            };
            CategoricalDist::new(p)
        }
    }

    fn markov() -> Markov {
        Markov {
            start: vec![0.5, 0.3, 0.2, 0.0],
            table: vec![
                vec![0.1, 0.6, 0.2, 0.1],
                vec![0.0, 0.0, 0.5, 0.5],
                vec![0.7, 0.1, 0.1, 0.1],
            ],
        }
    }

    #[test]
    fn full_beam_is_exact_marginal() {
        let m = markov();
        let beam = beam_global(&m, &[], 4).unwrap();
        let mut exact = vec![0.0; 4];
        for v in 0..3 {
            for (k, e) in exact.iter_mut().enumerate() {
                *e += m.start[v] * m.table[v][k];
            }
        }
        let exact = CategoricalDist::from_weights(exact).unwrap();
        assert!(tv_distance(&beam, &exact).unwrap() < 1e-12);
    }

    #[test]
    fn unit_beam_is_top_continuation() {
        let m = markov();
        let beam = beam_global(&m, &[], 1).unwrap();
        for (a, b) in beam.probs().iter().zip(&m.table[0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn beam_global_ignores_local_token() {
        let m = markov();
        let src = GlobalSource::BeamLm {
            helper: &m,
            beam_width: 2,
        };
        assert_eq!(
            hyp_global(&ctx(&[1], 0), &src).unwrap(),
            hyp_global(&ctx(&[1], 2), &src).unwrap()
        );
    }

    #[test]
    fn ignore_and_unigram() {
        let m = markov();
        let c = ctx(&[2], 1);
        assert_eq!(hyp_ignore(&m, &c).unwrap(), m.next_dist(&[2]).unwrap());
        let counts = count_corpus(&[TokenSeq::new(vec![0, 1, 1], true)], 3).unwrap();
        assert_eq!(hyp_unigram(&counts).unwrap(), hyp_unigram(&counts).unwrap());
    }

    #[test]
    fn fit_recovers_endpoints() {
        let cases = |target_local: bool| -> Vec<FitCase> {
            (0..5)
                .map(|i| {
                    let a = 0.1 + 0.15 * i as f64;
                    let local = d(&[a, 1.0 - a, 0.0]);
                    let global = d(&[0.0, 0.4, 0.6]);
                    FitCase {
                        target: if target_local { local.clone() } else { global.clone() },
                        local,
                        global,
                    }
                })
                .collect()
        };
        let r = fit_lambda(Family::Linear, TieMode::Free, &cases(true), 0.01, 0.05).unwrap();
        assert_eq!(r.params, InterpolationParams::Linear { lambda: 1.0 });
        assert_eq!(r.error, 0.0);
        let r = fit_lambda(Family::Linear, TieMode::Free, &cases(false), 0.01, 0.05).unwrap();
        assert_eq!(r.params, InterpolationParams::Linear { lambda: 0.0 });
        assert_eq!(r.error, 0.0);
        assert_eq!(r.curve.len(), 101);

        let r = fit_lambda(Family::Loglinear, TieMode::Complementary, &cases(true), 0.01, 0.05).unwrap();
        assert!(matches!(r.params, InterpolationParams::Loglinear { lambda1, .. } if lambda1 == 0.0));
        let r = fit_lambda(Family::Loglinear, TieMode::Free, &cases(false), 0.01, 0.05).unwrap();
        assert_eq!(r.curve.len(), 21 * 21);
        assert_eq!(r.error, 0.0);
    }

    #[test]
    fn hypothesis_config_round_trip() {
        let suite = Hypothesis::standard_suite();
        let json = serde_json::to_string(&suite).unwrap();
        assert_eq!(serde_json::from_str::<Vec<Hypothesis>>(&json).unwrap(), suite);
        let h: Hypothesis = serde_json::from_str(
            r#"{"kind":"interp_loglinear","params":{"family":"loglinear","lambda1":0.3,"lambda2":0.7,"tie_mode":"complementary"}}"#,
        )
        .unwrap();
        h.validate().unwrap();
        let bad: Hypothesis = serde_json::from_str(
            r#"{"kind":"interp_loglinear","params":{"family":"loglinear","lambda1":0.3,"lambda2":0.3,"tie_mode":"complementary"}}"#,
        )
        .unwrap();
        assert!(bad.validate().is_err());
    }
}
