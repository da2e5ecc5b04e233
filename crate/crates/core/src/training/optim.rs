//! AdamW with bias-corrected moments and decoupled weight decay.

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first and second moments plus the step count.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, params: &ParamStore) -> Self {
        Self {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// One update from the gradients accumulated in `params`:
    ///
    /// ```text
    /// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
    /// m̂ = m/(1−β1ᵗ)              v̂ = v/(1−β2ᵗ)
    /// θ ← θ − η·m̂/(√v̂+ε) − η·λ·θ
    /// ```
    ///
    /// The decay term uses θ before the update. Nothing is modified if any
    /// gradient is non-finite.
    pub fn adamw_step(&mut self, params: &mut ParamStore) -> Result<(), TrainError> {
        if let Some(p) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(TrainError::NonFiniteGradient(p.name.clone()));
        }
        let AdamWConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let theta = p.value.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                theta[i] = theta[i] - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * wd * theta[i];
            }
        }
        Ok(())
    }
}
