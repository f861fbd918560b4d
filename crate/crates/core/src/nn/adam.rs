use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient rejects the
    /// whole update and leaves both `params` and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, block: &str) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(shape_err("adam_step", self.first_moment.len(), grads.len()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient {
                block: block.to_string(),
            });
        }
        self.apply(params, grads, lr);
        Ok(())
    }

    /// The update itself; callers have already validated lengths and finiteness.
    pub(crate) fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let t = self.step as i32;
        // m̂ / (√v̂ + ε) with the bias corrections folded into two scalars
        let step_size = lr / (1.0 - beta1.powi(t));
        let inv_sqrt_bc2 = 1.0 / (1.0 - beta2.powi(t)).sqrt();
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + epsilon);
        }
    }
}
