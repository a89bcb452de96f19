use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surprise_theory::loglinear::{Aggregated, Objective};
use surprise_theory::*;

fn small_task(seed: u64) -> SyntheticTask {
    let mut cfg = TaskConfig::with_seed(seed);
    cfg.num_global = 6;
    cfg.num_local = 5;
    cfg.num_classes = 4;
    cfg.num_samples = 600;
    SyntheticTask::random(&cfg).unwrap()
}

#[test]
fn objective_is_midpoint_convex() {
    let task = small_task(1);
    let layout = FeatureLayout::new(6, 5, FeatureSubset::Full, &task.observed_pairs());
    let data = Aggregated::new(&task.train, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for lambda in [0.01, 1.0] {
        let obj = Objective::new(&layout, &data, lambda).unwrap();
        for _ in 0..100 {
            let a: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..obj.dim()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let (fa, fb, fm) = (obj.value(&a), obj.value(&b), obj.value(&mid));
            assert!(fm <= 0.5 * (fa + fb) + 1e-9 * fa.abs().max(1.0), "{fm} > mean of {fa}, {fb}");
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-12 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

/// Two classes, one sample, one feature: symmetry forces θ₁ = −θ₀ = −t and
/// the objective reduces to `−log σ(2t) + 2λt²`.
#[test]
fn single_feature_optimum_matches_scalar_search() {
    let samples = [(0, 0, 0)];
    for lambda in [0.01, 0.1, 1.0, 10.0] {
        let layout = FeatureLayout::new(1, 1, FeatureSubset::GlobalOnly, &BTreeSet::new());
        let model = train_loglinear(&samples, 2, layout, lambda, DEFAULT_TOL).unwrap();
        let t = golden_section(|t| (1.0 + (-2.0 * t).exp()).ln() + 2.0 * lambda * t * t, 0.0, 50.0);
        assert!((model.weight(0, 0) - t).abs() < 1e-6, "λ={lambda}: {} vs {t}", model.weight(0, 0));
        assert!((model.weight(1, 0) + t).abs() < 1e-6);
        assert!(model.grad_norm < DEFAULT_TOL);
    }
}

#[test]
fn gradients_match_finite_differences() {
    let task = small_task(3);
    for lambda in [0.01, 1.0] {
        let mut model = train_subset(&task.train, 6, 5, 4, FeatureSubset::Full, lambda, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-1.0..1.0));
        let err = grad_check_loglinear(&model, &task.train).unwrap();
        assert!(err < 1e-6, "λ={lambda}: {err}");
    }
}

#[test]
fn stronger_regularization_shrinks_weights() {
    let task = small_task(5);
    let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0]
        .iter()
        .map(|&l| {
            let m = train_subset(&task.train, 6, 5, 4, FeatureSubset::Full, l, DEFAULT_TOL).unwrap();
            m.weights.iter().map(|w| w * w).sum::<f64>()
        })
        .collect();
    assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
}

#[test]
fn lemma_holds_between_full_and_restricted_models() {
    let task = small_task(6);
    for lambda in [0.1, 1.0] {
        let t = train_triple(&task, lambda, DEFAULT_TOL).unwrap();
        for other in [&t.global_only, &t.local_only] {
            let r = verify_lemma(&t.full, other, &task.train, lambda, DEFAULT_TOL, EpsilonVariant::Sum).unwrap();
            assert!(r.pass, "{:?}", r.violations.first());
            assert!(r.pairs_checked > 0);
        }
    }
}

#[test]
fn proposition_holds_on_small_tasks() {
    for seed in 10..14 {
        let task = small_task(seed);
        for lambda in [0.1, 1.0, 10.0] {
            let r = verify_proposition(&task, lambda, DEFAULT_TOL).unwrap();
            assert!(r.pass, "seed {seed} λ={lambda}: {:?}", r.worst);
            assert_eq!(r.surprising_pairs, task.surprising.len());
        }
    }
}

#[test]
fn training_is_deterministic() {
    let task = small_task(7);
    let a = train_subset(&task.train, 6, 5, 4, FeatureSubset::Full, 0.1, DEFAULT_TOL).unwrap();
    let b = train_subset(&task.train, 6, 5, 4, FeatureSubset::Full, 0.1, DEFAULT_TOL).unwrap();
    assert_eq!(a, b);
    assert_eq!(small_task(7), task);
}
