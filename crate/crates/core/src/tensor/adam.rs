use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::ParamStore;

/// Adam hyperparameters. Defaults are the stock values with a 1e-4 step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment buffers, one pair per tracked parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
            v: params
                .tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
        }
    }

    fn check(&self, params: &ParamStore) -> Result<()> {
        if self.m.len() != params.len() || self.v.len() != params.len() {
            return Err(Error::State(format!(
                "moment buffers track {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((t, m), v) in params.tensors().iter().zip(&self.m).zip(&self.v) {
            if m.len() != t.len() || v.len() != t.len() {
                return Err(Error::State(format!(
                    "moment buffer length {} / {} for parameter of {} values",
                    m.len(),
                    v.len(),
                    t.len()
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update using the gradients stored on the
    /// parameters. Parameters without a gradient are treated as zero-gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        self.check(params)?;
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((t, m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let grad = t.grad().map(<[f64]>::to_vec);
            let data = t.data_mut();
            for i in 0..data.len() {
                let mut g = grad.as_ref().map_or(0.0, |g| g[i]);
                if c.weight_decay != 0.0 {
                    g += c.weight_decay * data[i];
                }
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
