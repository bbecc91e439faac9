//! Central finite-difference verification of the analytic gradients.

use rand_chacha::ChaCha8Rng;

use super::model::{DropoutMode, Gradients, Model, ModelInput, ParamSet};
use super::NnError;

/// Denominator floor of the relative error, so components whose true value is
/// ~0 are judged on absolute error instead of amplified rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-7;

/// `|a - n| / max(|a| + |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Worst relative error per named tensor.
    pub per_tensor: Vec<(String, f64)>,
    /// True when the probability clamp was active at the base point.
    pub clamp_engaged: bool,
    pub parameters_checked: usize,
    pub passed: bool,
}

pub fn grad_check(
    model: &Model,
    input: &ModelInput,
    y: f64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NnError> {
    grad_check_with(model, input, y, step, tolerance, |_| {})
}

/// Like [`grad_check`], with a hook that may alter the analytic gradient
/// before comparison.
pub fn grad_check_with(
    model: &Model,
    input: &ModelInput,
    y: f64,
    step: f64,
    tolerance: f64,
    tamper: impl FnOnce(&mut Gradients),
) -> Result<GradCheckReport, NnError> {
    let base = model.loss_and_grad::<ChaCha8Rng>(input, y, 1.0, DropoutMode::Off)?;
    let mut analytic = base.grads;
    tamper(&mut analytic);
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();

    let names = model.tensor_names();
    let mut probe = model.clone();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut count = 0;
    for (k, name) in names.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..analytic[k].len() {
            let orig = probe.tensors()[k][j];
            probe.tensors_mut()[k][j] = orig + step;
            let plus = probe.loss(input, y)?;
            probe.tensors_mut()[k][j] = orig - step;
            let minus = probe.loss(input, y)?;
            probe.tensors_mut()[k][j] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[k][j], numeric));
            count += 1;
        }
        per_tensor.push((name.clone(), worst));
    }
    let max_relative_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_relative_error,
        per_tensor,
        clamp_engaged: base.clamped,
        parameters_checked: count,
        passed: max_relative_error < tolerance && max_relative_error.is_finite(),
    })
}
