//! Bias-corrected adaptive-moment optimizer.

use crate::error::CoreError;
use crate::tensor::{Scalar, Tensor};

/// Optimizer hyperparameters. `step_size` is typically overwritten each step
/// by the learning-rate schedule.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            step_size: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    pub params: AdamParams,
}

impl<T: Scalar> OptimizerState<T> {
    /// Zeroed state shaped after the parameter list.
    pub fn new(param_shapes: &[Tensor<T>], params: AdamParams) -> Self {
        OptimizerState {
            m: param_shapes.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: param_shapes.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            step: 0,
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over aligned parameter and gradient lists. Missing
    /// gradients (parameters unused in this step's graph) leave the
    /// parameter and its accumulators untouched by the gradient but still
    /// advance the shared step counter.
    pub fn adam_step(
        &mut self,
        params: &mut [Tensor<T>],
        grads: &[Option<Vec<T>>],
    ) -> Result<(), CoreError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(CoreError::InvalidInput(format!(
                "adam_step: {} params, {} grads, state sized for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(self.params.beta1);
        let b2 = T::from_f64(self.params.beta2);
        let eps = T::from_f64(self.params.epsilon);
        let lr = T::from_f64(self.params.step_size);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);

        for (i, p) in params.iter_mut().enumerate() {
            let g = match &grads[i] {
                Some(g) => g,
                None => continue,
            };
            if g.len() != p.len() {
                return Err(CoreError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let mut new_vals = p.values().to_vec();
            for j in 0..g.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                new_vals[j] = new_vals[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            *p = Tensor::from_vec(p.shape().to_vec(), new_vals)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_1d(vals: &[f64]) -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(vec![vals.len()], vals.to_vec()).unwrap()]
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = params_1d(&[1.0, -2.0, 3.5]);
        let before = p[0].clone();
        let mut state = OptimizerState::new(&p, AdamParams::default());
        state
            .adam_step(&mut p, &[Some(vec![0.0, 0.0, 0.0])])
            .unwrap();
        assert!(p[0].bitwise_eq(&before));
        assert_eq!(state.step_count(), 1);
    }

    // Single-step oracle: with fresh state, m_hat = g and v_hat = g*g, so the
    // update is exactly -lr * g / (|g| + eps), independent of |g|'s scale.
    #[test]
    fn first_step_matches_hand_formula() {
        let g = [0.3, -1.7, 42.0];
        let hp = AdamParams {
            step_size: 1e-3,
            ..AdamParams::default()
        };
        let mut p = params_1d(&[0.0, 0.0, 0.0]);
        let mut state = OptimizerState::new(&p, hp);
        state.adam_step(&mut p, &[Some(g.to_vec())]).unwrap();
        for (j, &gj) in g.iter().enumerate() {
            let expected = -hp.step_size * gj / (gj.abs() + hp.epsilon);
            let got = p[0].values()[j];
            assert!(
                (got - expected).abs() < 1e-15,
                "coord {j}: got {got}, expected {expected}"
            );
        }
    }

    // Closed-form moment recursion: for a constant gradient the bias-corrected
    // ratio m_hat/sqrt(v_hat) has magnitude <= 1 with equality at step 1, so
    // step sizes cannot grow.
    #[test]
    fn constant_gradient_step_magnitude_is_non_increasing() {
        let mut p = params_1d(&[1.0]);
        let mut state = OptimizerState::new(&p, AdamParams::default());
        let g = vec![0.5];
        let mut prev = p[0].values()[0];
        state.adam_step(&mut p, &[Some(g.clone())]).unwrap();
        let first = (p[0].values()[0] - prev).abs();
        prev = p[0].values()[0];
        state.adam_step(&mut p, &[Some(g)]).unwrap();
        let second = (p[0].values()[0] - prev).abs();
        assert!(
            second <= first + 1e-15,
            "second step {second} larger than first {first}"
        );
    }

    #[test]
    fn misaligned_gradient_is_an_error() {
        let mut p = params_1d(&[1.0, 2.0]);
        let mut state = OptimizerState::new(&p, AdamParams::default());
        let err = state.adam_step(&mut p, &[Some(vec![1.0])]);
        assert!(err.is_err());
    }
}
