//! Central-difference check of the hand-written gradients.

use super::Differentiable;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Parameter index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub n_checked: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares the analytic gradient of the summed loss over `examples` with
/// central differences at every parameter (or every `stride`-th one).
pub fn check_gradients<M: Differentiable<f64>>(
    model: &M,
    examples: &[M::Input],
    eps: f64,
    stride: usize,
) -> Result<GradCheck> {
    let loss = |m: &M| -> Result<f64> {
        let mut scratch = vec![0.0; m.params().len()];
        let mut total = 0.0;
        for x in examples {
            total += m.accumulate_grad(x, 1.0, &mut scratch)?;
        }
        Ok(total)
    };
    let mut grad = vec![0.0; model.params().len()];
    for x in examples {
        model.accumulate_grad(x, 1.0, &mut grad)?;
    }
    let mut probe = model.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        n_checked: 0,
    };
    for i in (0..grad.len()).step_by(stride.max(1)) {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let up = loss(&probe)?;
        probe.params_mut()[i] = orig - eps;
        let down = loss(&probe)?;
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = rel_error(grad[i], numeric, 1e-6);
        worst.n_checked += 1;
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
                analytic: grad[i],
                numeric,
                n_checked: worst.n_checked,
            };
        }
    }
    Ok(worst)
}
