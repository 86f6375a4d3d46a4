use ndarray::ArrayView2;

use crate::error::Result;

use super::{mse_loss, MlpModel};

/// Gradients smaller than this on both sides are treated as dead units.
const DEAD_GRADIENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

fn frozen_loss(model: &MlpModel, inputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    let cache = model.forward_frozen(inputs)?;
    mse_loss(cache.output.view(), targets)
}

/// Compares backprop gradients with central differences over every
/// parameter. Running statistics are never updated, so the sweep is
/// reproducible.
pub fn grad_check(
    model: &MlpModel,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    epsilon_fd: f64,
) -> Result<GradCheckReport> {
    let cache = model.forward_frozen(inputs)?;
    let grads = model.backward(&cache, targets)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for (k, tensor) in analytic.iter().enumerate() {
        for (i, &a) in tensor.iter().enumerate() {
            let original = probe.parameters()[k][i];
            probe.parameters_mut()[k][i] = original + epsilon_fd;
            let plus = frozen_loss(&probe, inputs, targets)?;
            probe.parameters_mut()[k][i] = original - epsilon_fd;
            let minus = frozen_loss(&probe, inputs, targets)?;
            probe.parameters_mut()[k][i] = original;

            let numeric = (plus - minus) / (2.0 * epsilon_fd);
            if a.abs() < DEAD_GRADIENT && numeric.abs() < DEAD_GRADIENT {
                report.skipped += 1;
                continue;
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
