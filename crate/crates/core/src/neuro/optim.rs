use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::neuro::{ParameterSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Adaptive-moment optimizer with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParameterSet, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Self { config, step: 0, first: zeros(), second: zeros() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update using the gradient slots of `params`.
    pub fn step(&mut self, params: &mut ParameterSet) -> Result<()> {
        let (values, grads) = params.split_mut();
        if values.len() != self.first.len() {
            return Err(Error::LengthMismatch { expected: self.first.len(), got: values.len() });
        }
        for (v, m) in values.iter().zip(&self.first) {
            if v.shape() != m.shape() {
                return Err(Error::ShapeMismatch {
                    expected: m.shape().to_vec(),
                    got: v.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - math::powf(beta1, t);
        let c2 = 1.0 - math::powf(beta2, t);
        for ((value, grad), (m, s)) in
            values.iter_mut().zip(grads).zip(self.first.iter_mut().zip(&mut self.second))
        {
            let it = value
                .values_mut()
                .iter_mut()
                .zip(grad.values())
                .zip(m.values_mut().iter_mut().zip(s.values_mut()));
            for ((w, &g), (mi, si)) in it {
                *mi = beta1 * *mi + (1.0 - beta1) * g;
                *si = beta2 * *si + (1.0 - beta2) * g * g;
                let m_hat = *mi / c1;
                let s_hat = *si / c2;
                *w -= learning_rate * m_hat / (math::sqrt(s_hat) + epsilon);
            }
        }
        Ok(())
    }
}
