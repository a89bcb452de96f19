//! L2-regularized multinomial log-linear models over indicator features.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};
use crate::features::{FeatureLayout, FeatureSubset};
use crate::task::Sample;

/// Gradient ∞-norm at which training stops.
pub const DEFAULT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 1_000_000;
const LBFGS_MEMORY: usize = 20;
const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Samples grouped by context: `(g, l)` → class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub num_classes: usize,
    pub contexts: Vec<((u32, u32), Vec<f64>)>,
}

impl Aggregated {
    pub fn new(samples: &[Sample], num_classes: usize) -> Result<Self> {
        let mut map: BTreeMap<(u32, u32), Vec<f64>> = BTreeMap::new();
        for &(g, l, y) in samples {
            if y as usize >= num_classes {
                return Err(TheoryError::OutOfRange(format!("class {y} >= {num_classes}")));
            }
            map.entry((g, l)).or_insert_with(|| vec![0.0; num_classes])[y as usize] += 1.0;
        }
        Ok(Self {
            num_classes,
            contexts: map.into_iter().collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLinearModel {
    pub layout: FeatureLayout,
    pub num_classes: usize,
    pub reg_lambda: f64,
    /// Row-major `[class][feature]`.
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl LogLinearModel {
    pub fn zeros(layout: FeatureLayout, num_classes: usize, reg_lambda: f64) -> Self {
        let n = layout.len() * num_classes;
        Self {
            layout,
            num_classes,
            reg_lambda,
            weights: vec![0.0; n],
            iterations: 0,
            grad_norm: f64::NAN,
        }
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.layout.len() + feature]
    }

    /// `p(· | g, l)`.
    pub fn predict(&self, g: u32, l: u32) -> Result<Vec<f64>> {
        let active = self.layout.active(g, l)?;
        Ok(softmax_active(&self.weights, self.layout.len(), self.num_classes, &active))
    }
}

fn softmax_active(w: &[f64], nf: usize, ny: usize, active: &[usize]) -> Vec<f64> {
    let logits: Vec<f64> = (0..ny)
        .map(|y| active.iter().map(|&i| w[y * nf + i]).sum())
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// The training objective for a fixed feature layout and data set.
pub struct Objective<'a> {
    pub layout: &'a FeatureLayout,
    pub num_classes: usize,
    pub reg_lambda: f64,
    active: Vec<Vec<usize>>,
    counts: Vec<&'a [f64]>,
}

impl<'a> Objective<'a> {
    pub fn new(layout: &'a FeatureLayout, data: &'a Aggregated, reg_lambda: f64) -> Result<Self> {
        let mut active = Vec::with_capacity(data.contexts.len());
        let mut counts = Vec::with_capacity(data.contexts.len());
        for ((g, l), c) in &data.contexts {
            active.push(layout.active(*g, *l)?);
            counts.push(c.as_slice());
        }
        Ok(Self {
            layout,
            num_classes: data.num_classes,
            reg_lambda,
            active,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.len() * self.num_classes
    }

    /// `−Σ log p(y | x; θ) + λ‖θ‖²`.
    pub fn value(&self, w: &[f64]) -> f64 {
        self.value_grad_impl(w, None)
    }

    pub fn value_grad(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        self.value_grad_impl(w, Some(grad))
    }

    /// Gradient of the data term alone, `Σ φ(x)(p − y)`.
    pub fn data_gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        self.value_grad(w, &mut g);
        for (gi, wi) in g.iter_mut().zip(w) {
            *gi -= 2.0 * self.reg_lambda * wi;
        }
        g
    }

    fn value_grad_impl(&self, w: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let nf = self.layout.len();
        let ny = self.num_classes;
        let mut f = self.reg_lambda * w.iter().map(|x| x * x).sum::<f64>();
        if let Some(g) = grad.as_deref_mut() {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi = 2.0 * self.reg_lambda * wi;
            }
        }
        let mut logits = vec![0.0; ny];
        for (active, counts) in self.active.iter().zip(&self.counts) {
            for (y, lg) in logits.iter_mut().enumerate() {
                *lg = active.iter().map(|&i| w[y * nf + i]).sum();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            let total: f64 = counts.iter().sum();
            for y in 0..ny {
                f -= counts[y] * (logits[y] - lse);
            }
            if let Some(g) = grad.as_deref_mut() {
                for y in 0..ny {
                    let d = total * (logits[y] - lse).exp() - counts[y];
                    for &i in active {
                        g[y * nf + i] += d;
                    }
                }
            }
        }
        f
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Minimizes the regularized objective from `θ = 0` with L-BFGS until the
/// gradient ∞-norm drops below `tol`.
///
/// The line search backtracks from the unit step and accepts either the
/// Armijo condition or a non-positive directional derivative at the trial
/// point. The second test matters near the optimum, where objective changes
/// fall below floating-point resolution; along a line the objective is
/// convex, so a non-positive slope at the trial point implies descent.
pub fn train_loglinear(
    samples: &[Sample],
    num_classes: usize,
    layout: FeatureLayout,
    reg_lambda: f64,
    tol: f64,
) -> Result<LogLinearModel> {
    if !(reg_lambda > 0.0 && reg_lambda.is_finite()) {
        return Err(TheoryError::InvalidConfig(format!("reg_lambda {reg_lambda} must be positive")));
    }
    if samples.is_empty() {
        return Err(TheoryError::EmptyData);
    }
    if layout.is_empty() {
        return Err(TheoryError::InvalidConfig("empty feature set".into()));
    }
    let data = Aggregated::new(samples, num_classes)?;
    let obj = Objective::new(&layout, &data, reg_lambda)?;
    let n = obj.dim();
    let mut w = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut f = obj.value_grad(&w, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut w_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    while inf_norm(&g) >= tol {
        if iterations >= MAX_ITERATIONS {
            return Err(TheoryError::NonConvergence {
                iterations,
                grad_norm: inf_norm(&g),
            });
        }
        iterations += 1;

        // Two-loop recursion.
        let mut d: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = history
            .back()
            .map_or(1.0 / (2.0 * reg_lambda + inf_norm(&g)).max(1.0), |(s, y, _)| dot(s, y) / dot(y, y));
        for di in &mut d {
            *di *= gamma;
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            // Not a descent direction: restart from steepest descent.
            history.clear();
            d = g.iter().map(|x| -x).collect();
            slope = dot(&g, &d);
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            for ((wn, wi), di) in w_new.iter_mut().zip(&w).zip(&d) {
                *wn = wi + t * di;
            }
            let f_new = obj.value_grad(&w_new, &mut g_new);
            if f_new.is_finite() && (f_new <= f + ARMIJO_C * t * slope || dot(&g_new, &d) <= 0.0) {
                let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 0.0 {
                    if history.len() == LBFGS_MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                std::mem::swap(&mut w, &mut w_new);
                std::mem::swap(&mut g, &mut g_new);
                f = f_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if history.is_empty() {
                return Err(TheoryError::NonConvergence {
                    iterations,
                    grad_norm: inf_norm(&g),
                });
            }
            history.clear();
        }
    }

    Ok(LogLinearModel {
        grad_norm: inf_norm(&g),
        layout,
        num_classes,
        reg_lambda,
        weights: w,
        iterations,
    })
}

/// Convenience: builds the feature layout for `subset` from the samples.
pub fn train_subset(
    samples: &[Sample],
    num_global: usize,
    num_local: usize,
    num_classes: usize,
    subset: FeatureSubset,
    reg_lambda: f64,
    tol: f64,
) -> Result<LogLinearModel> {
    let observed = samples.iter().map(|&(g, l, _)| (g, l)).collect();
    let layout = FeatureLayout::new(num_global, num_local, subset, &observed);
    train_loglinear(samples, num_classes, layout, reg_lambda, tol)
}

/// Central-difference step.
pub const LOGLINEAR_CHECK_STEP: f64 = 1e-5;
const CHECK_FLOOR: f64 = 1e-6;

/// Max relative error between the analytic gradient at the model's weights
/// and central differences, `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check_loglinear(model: &LogLinearModel, samples: &[Sample]) -> Result<f64> {
    let data = Aggregated::new(samples, model.num_classes)?;
    let obj = Objective::new(&model.layout, &data, model.reg_lambda)?;
    let mut grad = vec![0.0; obj.dim()];
    obj.value_grad(&model.weights, &mut grad);
    let mut w = model.weights.clone();
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let orig = w[i];
        w[i] = orig + LOGLINEAR_CHECK_STEP;
        let up = obj.value(&w);
        w[i] = orig - LOGLINEAR_CHECK_STEP;
        let down = obj.value(&w);
        w[i] = orig;
        let numeric = (up - down) / (2.0 * LOGLINEAR_CHECK_STEP);
        let err = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(CHECK_FLOOR);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureSubset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_samples(seed: u64, n: usize) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.gen_range(0..3), rng.gen_range(0..3), rng.gen_range(0..4)))
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences_at_random_weights() {
        let samples = small_samples(1, 60);
        let mut m = train_subset(&samples, 3, 3, 4, FeatureSubset::Full, 0.5, 1e-8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for w in &mut m.weights {
            *w = rng.gen_range(-2.0..2.0);
        }
        assert!(grad_check_loglinear(&m, &samples).unwrap() < 1e-6);
    }

    #[test]
    fn regularizer_gradient_alone() {
        let layout = FeatureLayout::new(2, 2, FeatureSubset::Full, &Default::default());
        let data = Aggregated::new(&[], 3).unwrap();
        let obj = Objective::new(&layout, &data, 0.7).unwrap();
        let w: Vec<f64> = (0..obj.dim()).map(|i| i as f64 - 3.0).collect();
        let mut g = vec![0.0; w.len()];
        obj.value_grad(&w, &mut g);
        for (gi, wi) in g.iter().zip(&w) {
            assert_eq!(*gi, 2.0 * 0.7 * wi);
        }
    }

    #[test]
    fn zero_weights_data_gradient() {
        // Balanced: each (g, l) context carries classes 0 and 1 once each;
        // class 2 never occurs. At θ = 0 every prediction is 1/3.
        let samples = vec![(0, 0, 0), (0, 0, 1), (1, 0, 0), (1, 0, 1), (1, 1, 0), (1, 1, 1)];
        let layout = FeatureLayout::new(2, 2, FeatureSubset::Full, &samples.iter().map(|s| (s.0, s.1)).collect());
        let data = Aggregated::new(&samples, 3).unwrap();
        let obj = Objective::new(&layout, &data, 1.0).unwrap();
        let g = obj.data_gradient(&vec![0.0; obj.dim()]);
        let nf = layout.len();
        for (i, key) in layout.keys().iter().enumerate() {
            // Hand expansion: Σ_{x: φ_i(x)=1} (N_x / 3 − n_{x,y}).
            let hits: Vec<&Sample> = samples
                .iter()
                .filter(|s| layout.active(s.0, s.1).unwrap().contains(&i))
                .collect();
            for y in 0..3 {
                let expected: f64 = hits.len() as f64 / 3.0 - hits.iter().filter(|s| s.2 == y).count() as f64;
                assert!((g[y as usize * nf + i] - expected).abs() < 1e-12, "{key:?} class {y}");
            }
            // Unused class: prediction-weighted count.
            assert!((g[2 * nf + i] - hits.len() as f64 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn descends_from_zero_and_converges() {
        let samples = small_samples(3, 200);
        for lambda in [0.01, 0.1, 1.0, 10.0] {
            let m = train_subset(&samples, 3, 3, 4, FeatureSubset::Full, lambda, 1e-8).unwrap();
            assert!(m.grad_norm < 1e-8);
            let data = Aggregated::new(&samples, 4).unwrap();
            let obj = Objective::new(&m.layout, &data, lambda).unwrap();
            assert!(obj.value(&m.weights) <= obj.value(&vec![0.0; obj.dim()]));
        }
    }

    #[test]
    fn heavy_regularization_gives_near_uniform() {
        let samples = small_samples(4, 200);
        let m = train_subset(&samples, 3, 3, 4, FeatureSubset::Full, 1e4, 1e-8).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-2));
        for p in m.predict(1, 2).unwrap() {
            assert!((p - 0.25).abs() < 1e-2);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let layout = || FeatureLayout::new(1, 1, FeatureSubset::Full, &Default::default());
        assert!(matches!(train_loglinear(&[], 2, layout(), 1.0, 1e-8), Err(TheoryError::EmptyData)));
        assert!(train_loglinear(&[(0, 0, 0)], 2, layout(), 0.0, 1e-8).is_err());
    }
}
