//! Adam optimizer over a [`ParameterStore`].

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter used
/// for bias correction.
pub struct AdamState {
    config: AdamConfig,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParameterStore, config: AdamConfig) -> Self {
        let first_moment = store.iter().map(|(_, p)| vec![0.0; p.values.len()]).collect();
        let second_moment = store.iter().map(|(_, p)| vec![0.0; p.values.len()]).collect();
        Self {
            config,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    /// One bias-corrected Adam update over every parameter. Gradients are
    /// cleared afterwards. A non-finite gradient or updated value aborts,
    /// naming the offending parameter.
    pub fn step(&mut self, store: &mut ParameterStore) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (idx, id) in ids.into_iter().enumerate() {
            {
                let p = store.get(id);
                if let Some(bad) = p.grad.iter().find(|g| !g.is_finite()) {
                    return Err(Error::Training {
                        epoch: 0,
                        msg: format!("non-finite gradient {} in parameter `{}`", bad, p.name),
                    });
                }
            }
            let p = store.get_mut(id);
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.values[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                p.grad[i] = 0.0;
            }
            if let Some(bad) = p.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Training {
                    epoch: 0,
                    msg: format!("non-finite value {} in parameter `{}` after update", bad, p.name),
                });
            }
        }
        Ok(())
    }
}
