//! Adam optimiser with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tape::Tensor;

/// Hyperparameters shared by every gradient-based fit in the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Epochs for network training, iterations for direct reconstruction.
    pub iterations: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 1000,
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
                expected: "finite and non-negative",
            });
        }
        for (name, value) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&value) {
                return Err(Error::InvalidParameter { name, value, expected: "within [0, 1)" });
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                expected: "strictly positive",
            });
        }
        Ok(())
    }
}

/// First and second moment accumulators for one parameter set.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// Zero-initialised moments matching the given parameter layout.
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update applied in place.
    ///
    /// With gradient 1 and zero moments the first step moves a parameter by
    /// exactly lr / (1 + epsilon_hat), fractionally under the learning rate.
    pub fn step(
        &mut self,
        params: &mut [Tensor],
        grads: &[Vec<f64>],
        config: &OptimConfig,
    ) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                primitive: "adam_step",
                detail: format!(
                    "{} parameter tensors, {} gradient buffers, state holds {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            });
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - config.beta1.powf(t);
        let bc2 = 1.0 - config.beta2.powf(t);
        for (i, param) in params.iter_mut().enumerate() {
            if grads[i].len() != param.len() {
                return Err(Error::ShapeMismatch {
                    primitive: "adam_step",
                    detail: format!(
                        "parameter {} holds {} entries, gradient holds {}",
                        i,
                        param.len(),
                        grads[i].len()
                    ),
                });
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = param.data_mut();
            for j in 0..data.len() {
                let g = grads[i][j];
                m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
                v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_with_unit_gradient_moves_by_almost_the_learning_rate() {
        // Closed form for one step from zero moments with g = 1:
        // m_hat = 1, v_hat = 1, so delta = -lr / (1 + eps). With lr = 0.1 the
        // parameter lands at -0.09999999900000002 from zero.
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![vec![1.0]];
        let config = OptimConfig { learning_rate: 0.1, iterations: 1, ..OptimConfig::default() };
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, &config).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((params[0].data()[0] - expected).abs() < 1e-16);
        assert!((params[0].data()[0] + 0.09999999900000002).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_steps_approach_constant_magnitude() {
        // Adam with a constant gradient converges to steps of size lr.
        let mut params = vec![Tensor::scalar(0.0)];
        let grads = vec![vec![0.5]];
        let config = OptimConfig { learning_rate: 0.01, ..OptimConfig::default() };
        let mut state = AdamState::new(&params);
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..500 {
            state.step(&mut params, &grads, &config).unwrap();
            last_delta = params[0].data()[0] - prev;
            prev = params[0].data()[0];
        }
        assert!((last_delta.abs() - 0.01).abs() < 1e-4, "step size {}", last_delta);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_bit_identical() {
        let mut params = vec![
            Tensor::new(vec![3], vec![0.25, -1.5, 2.0]).unwrap(),
            Tensor::scalar(7.0),
        ];
        let snapshot = params.clone();
        let grads = vec![vec![1.0, -2.0, 0.5], vec![3.0]];
        let config = OptimConfig { learning_rate: 0.0, ..OptimConfig::default() };
        let mut state = AdamState::new(&params);
        for _ in 0..10 {
            state.step(&mut params, &grads, &config).unwrap();
        }
        assert_eq!(params, snapshot);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // Minimise (x - 3)^2 by feeding Adam its analytic gradient.
        let mut params = vec![Tensor::scalar(0.0)];
        let config = OptimConfig { learning_rate: 0.05, ..OptimConfig::default() };
        let mut state = AdamState::new(&params);
        for _ in 0..2000 {
            let x = params[0].data()[0];
            let grads = vec![vec![2.0 * (x - 3.0)]];
            state.step(&mut params, &grads, &config).unwrap();
        }
        assert!((params[0].data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn mismatched_gradient_layout_is_rejected() {
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new(&params);
        let config = OptimConfig::default();
        assert!(state.step(&mut params, &[vec![1.0, 2.0]], &config).is_err());
        assert!(state.step(&mut params, &[], &config).is_err());
    }

    #[test]
    fn config_validation_bounds() {
        let mut config = OptimConfig::default();
        assert!(config.validate().is_ok());
        config.beta1 = 1.0;
        assert!(config.validate().is_err());
        config.beta1 = 0.9;
        config.epsilon = 0.0;
        assert!(config.validate().is_err());
        config.epsilon = 1e-8;
        config.learning_rate = f64::NAN;
        assert!(config.validate().is_err());
    }
}
