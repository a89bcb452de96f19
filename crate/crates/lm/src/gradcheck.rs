use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::LmConfig;
use crate::error::Result;
use crate::model::{Example, Model};

/// Finite-difference step.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Denominator floor, so entries where both gradients are ~0 do not divide
/// by noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter tensor holding the worst entry.
    pub worst_param: usize,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR)
}

/// Compares analytic gradients of a freshly initialized `f64` model against
/// central differences over every parameter.
pub fn grad_check_lm(config: &LmConfig, batch: &[Example], seed: u64) -> Result<GradCheckReport> {
    let model = Model::<f64>::init(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    grad_check_model(&model, batch)
}

pub fn grad_check_model(model: &Model<f64>, batch: &[Example]) -> Result<GradCheckReport> {
    let (_, grads) = model.loss_and_grads::<ChaCha8Rng>(batch, None)?;
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst_param: 0,
    };
    for (k, g) in grads.iter().enumerate() {
        for idx in 0..g.len() {
            let orig = model.params[k].as_slice().expect("contiguous")[idx];
            probe.params[k].as_slice_mut().expect("contiguous")[idx] = orig + GRAD_CHECK_STEP;
            let up = probe.loss(batch)?;
            probe.params[k].as_slice_mut().expect("contiguous")[idx] = orig - GRAD_CHECK_STEP;
            let down = probe.loss(batch)?;
            probe.params[k].as_slice_mut().expect("contiguous")[idx] = orig;
            let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
            let err = relative_error(g.as_slice().expect("contiguous")[idx], numeric);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst_param = k;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
