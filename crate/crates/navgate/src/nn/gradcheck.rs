//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::nn::params::{Gradients, NetworkParams};

/// Compare analytic gradients against central finite differences of `loss`.
///
/// Returns the maximum over all parameters of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn finite_diff_check<F>(
    params: &NetworkParams,
    analytic: &Gradients,
    loss: F,
    epsilon: f64,
) -> Result<f64>
where
    F: Fn(&NetworkParams) -> Result<f64>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::Domain(format!(
            "epsilon must lie in [1e-7, 1e-3], got {epsilon}"
        )));
    }
    let mut work = params.clone();
    let mut max_err = 0.0_f64;
    for layer_idx in 0..params.layers().len() {
        let name = params.layers()[layer_idx].name.clone();
        let analytic_layer = analytic.get(&name)?;
        for part in 0..2 {
            let count = if part == 0 {
                params.layers()[layer_idx].weights.len()
            } else {
                params.layers()[layer_idx].bias.len()
            };
            for i in 0..count {
                let original = {
                    let l = work.get(&name)?;
                    if part == 0 {
                        l.weights.data()[i]
                    } else {
                        l.bias.data()[i]
                    }
                };
                let mut eval_at = |v: f64| -> Result<f64> {
                    {
                        let l = work.get_mut(&name)?;
                        if part == 0 {
                            l.weights.data_mut()[i] = v;
                        } else {
                            l.bias.data_mut()[i] = v;
                        }
                    }
                    loss(&work)
                };
                let plus = eval_at(original + epsilon)?;
                let minus = eval_at(original - epsilon)?;
                eval_at(original)?;
                let numeric = (plus - minus) / (2.0 * epsilon);
                let a = if part == 0 {
                    analytic_layer.weights.data()[i]
                } else {
                    analytic_layer.bias.data()[i]
                };
                let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
                max_err = max_err.max(err);
            }
        }
    }
    Ok(max_err)
}
