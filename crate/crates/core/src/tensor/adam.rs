//! Adam optimizer with bias correction.

use super::Tensor;
use crate::error::{Error, Result};

/// Per-parameter first/second moment estimates plus step counter.
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, params: &[Tensor]) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second_moment: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One update using the gradients currently accumulated on `params`.
    /// Gradients are left untouched; the caller zeroes them between steps.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.first_moment.len() {
            return Err(Error::Dim(format!(
                "adam_step: {} parameters for state of {}",
                params.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, param) in params.iter().enumerate() {
            if param.len() != self.first_moment[idx].len() {
                return Err(Error::Dim(format!(
                    "adam_step: parameter {idx} has {} values, state has {}",
                    param.len(),
                    self.first_moment[idx].len()
                )));
            }
            let grad = param.grad();
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let mut values = param.values();
            for i in 0..values.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                values[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            param.set_values(&values);
        }
        Ok(())
    }
}

/// Clear accumulated gradients on every parameter.
pub fn zero_grads(params: &[Tensor]) {
    for p in params {
        p.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let p = Tensor::new(&[3], vec![1.0, -2.0, 0.5], true).unwrap();
        let mut state = AdamState::new(1e-4, std::slice::from_ref(&p));
        state.step(std::slice::from_ref(&p)).unwrap();
        assert_eq!(p.values(), vec![1.0, -2.0, 0.5]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let p = Tensor::new(&[1], vec![0.0], true).unwrap();
        let mut state = AdamState::new(1e-2, std::slice::from_ref(&p));
        p.add_to_grad(&[3.7]);
        state.step(std::slice::from_ref(&p)).unwrap();
        // bias-corrected first step has magnitude ≈ lr regardless of |g|
        let moved = p.values()[0];
        assert!((moved + 1e-2).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        let w = Tensor::new(&[1], vec![1.0], true).unwrap();
        let mut state = AdamState::new(1e-3, std::slice::from_ref(&w));
        let mut last = f64::INFINITY;
        for step in 0..2000 {
            w.zero_grad();
            let loss = w.mul(&w).unwrap().sum();
            loss.backward().unwrap();
            state.step(std::slice::from_ref(&w)).unwrap();
            if step % 500 == 0 {
                let cur = w.values()[0].abs();
                assert!(cur <= last + 1e-12, "no progress at step {step}");
                last = cur;
            }
        }
        assert!(w.values()[0].abs() < 0.1, "final w = {}", w.values()[0]);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let p = Tensor::new(&[2], vec![0.3, -0.4], true).unwrap();
            let mut state = AdamState::new(1e-3, std::slice::from_ref(&p));
            for _ in 0..10 {
                p.zero_grad();
                p.mul(&p).unwrap().sum().backward().unwrap();
                state.step(std::slice::from_ref(&p)).unwrap();
            }
            p.values()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = Tensor::zeros(&[2], true);
        let q = Tensor::zeros(&[3], true);
        let mut state = AdamState::new(1e-3, std::slice::from_ref(&p));
        assert!(state.step(std::slice::from_ref(&q)).is_err());
    }
}
