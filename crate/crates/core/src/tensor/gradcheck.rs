//! Reverse-mode gradients versus central finite differences.

use super::{zero_grads, Tensor};
use crate::error::{Error, Result};

/// Compare the reverse-mode gradient of a scalar-valued closure against
/// central differences with step `h`, coordinate by coordinate, and return
/// the maximum relative error over all input coordinates.
///
/// The closure must be a pure function of the input values (freeze any noise
/// before calling). Relative error uses max(|analytic|, |numeric|, 1e-6) as
/// the denominator so that agreeing near-zero gradients score 0.
pub fn grad_check<F>(f: F, inputs: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let out = f(inputs)?;
    if out.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check: closure must return a scalar, got shape {:?}",
            out.shape()
        )));
    }
    zero_grads(inputs);
    out.backward()?;
    let analytic: Vec<Vec<f64>> = inputs.iter().map(|t| t.grad()).collect();

    let mut max_rel = 0.0f64;
    for (t, grads) in inputs.iter().zip(&analytic) {
        if !t.requires_grad() {
            continue;
        }
        for idx in 0..t.len() {
            t.nudge_value(idx, h);
            let plus = f(inputs)?.item();
            t.nudge_value(idx, -2.0 * h);
            let minus = f(inputs)?.item();
            t.nudge_value(idx, h);
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads[idx];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max((a - numeric).abs() / denom);
        }
    }
    Ok(max_rel)
}
