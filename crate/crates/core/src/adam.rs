//! Adam with coupled L2 weight decay: `wd·θ` is added to the gradient
//! before the moment updates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StadError};
use crate::graph::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f32, weight_decay: f32) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl AdamState {
    /// Zero moments for every parameter currently in `params`.
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let first: Vec<Vec<f32>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    /// Applies one update from the gradients in `params`, then clears them.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(StadError::invalid("optimizer state does not match parameter store"));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - (beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (beta2 as f64).powi(self.step as i32);
        let (bc1, bc2) = (bc1 as f32, bc2 as f32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            if p.value.len() != m.len() {
                return Err(StadError::shape(format!("optimizer moments for {}", p.name)));
            }
            let grads = p.grad.data();
            for (i, theta) in p.value.data_mut().iter_mut().enumerate() {
                let g = grads[i] + weight_decay * *theta;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *theta -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.value.check_finite("adam_step")?;
        }
        params.zero_grad();
        Ok(())
    }
}
