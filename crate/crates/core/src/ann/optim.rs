use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::mlp::{Gradient, MlpModel};
use crate::error::{Error, Result};

/// AdamW hyperparameters except the learning rate, which the schedule
/// supplies per step. Defaults follow the Keras implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            weight_decay: 4e-3,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("ann.optimizer.beta1", (0.0..1.0).contains(&self.beta1)),
            ("ann.optimizer.beta2", (0.0..1.0).contains(&self.beta2)),
            ("ann.optimizer.epsilon", self.epsilon > 0.0),
            ("ann.optimizer.weight_decay", self.weight_decay >= 0.0),
        ];
        match checks.iter().find(|(_, ok)| !ok) {
            Some((field, _)) => Err(Error::config(*field, "value out of range")),
            None => Ok(()),
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimizerConfig,
    m: Vec<DMatrix<f64>>,
    v: Vec<DMatrix<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: OptimizerConfig, model: &MlpModel) -> Self {
        let zeros: Vec<_> = model.weights.iter().map(|w| DMatrix::zeros(w.nrows(), w.ncols())).collect();
        AdamW {
            config,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update at learning rate `lr`: decay first, then the bias-corrected
    /// Adam step.
    pub fn step(&mut self, model: &mut MlpModel, grad: &Gradient, lr: f64) {
        let c = &self.config;
        self.step += 1;
        let t = self.step as i32;
        let alpha = lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        let decay = lr * c.weight_decay;
        for (((w, g), m), v) in model
            .weights
            .iter_mut()
            .zip(&grad.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for k in 0..w.len() {
                let gk = g[k];
                w[k] -= w[k] * decay;
                m[k] += (gk - m[k]) * (1.0 - c.beta1);
                v[k] += (gk * gk - v[k]) * (1.0 - c.beta2);
                w[k] -= alpha * m[k] / (v[k].sqrt() + c.epsilon);
            }
        }
    }
}

/// Half-cosine decay from `lr0` at epoch 0 to `lr_min` at `total`.
pub fn lr_at_epoch(lr0: f64, lr_min: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let phase = std::f64::consts::PI * epoch.min(total) as f64 / total as f64;
    lr_min + (lr0 - lr_min) * (1.0 + phase.cos()) / 2.0
}
