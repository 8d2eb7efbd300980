use serde::{Deserialize, Serialize};

use super::model::{mse, AutoencoderParams};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the worst parameter (serialization order).
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub params_checked: usize,
}

/// Compares the analytic gradient of the reconstruction loss on `window`
/// against central finite differences for every parameter.
pub fn gradient_check(params: &AutoencoderParams, window: &[f64], epsilon: f64) -> Result<GradCheckReport> {
    let (_, analytic) = params.loss_and_gradient(window)?;
    compare_with_finite_differences(params, window, epsilon, &analytic.flatten())
}

/// Relative error per parameter is `|a - n| / max(1e-8, |a| + |n|)`.
pub fn compare_with_finite_differences(
    params: &AutoencoderParams,
    window: &[f64],
    epsilon: f64,
    analytic: &[f64],
) -> Result<GradCheckReport> {
    let base = params.flatten();
    let mut probe = params.clone();
    let loss_at = |probe: &mut AutoencoderParams, flat: &[f64]| -> Result<f64> {
        probe.unflatten_into(flat)?;
        let cache = probe.forward(window)?;
        mse(&cache.reconstruction, window)
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        params_checked: base.len(),
    };
    let mut flat = base.clone();
    for k in 0..base.len() {
        flat[k] = base[k] + epsilon;
        let up = loss_at(&mut probe, &flat)?;
        flat[k] = base[k] - epsilon;
        let down = loss_at(&mut probe, &flat)?;
        flat[k] = base[k];
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[k];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_relative_error {
            report = GradCheckReport { max_relative_error: rel, worst_index: k, analytic: a, numeric, ..report };
        }
    }
    Ok(report)
}
