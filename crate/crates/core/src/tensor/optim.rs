use serde::{Deserialize, Serialize};

use super::BatchStats;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.997;
pub const BN_EPSILON: f64 = 1e-5;

/// Running statistics of one batch-norm layer. Scale and shift are ordinary
/// parameters and live with the other weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState { running_mean: vec![0.0; channels], running_var: vec![1.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    /// `running <- momentum * running + (1 - momentum) * batch` on the first
    /// `stats.mean.len()` channels.
    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        for (r, b) in self.running_mean.iter_mut().zip(&stats.mean) {
            *r = momentum * *r + (1.0 - momentum) * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&stats.var) {
            *r = (momentum * *r + (1.0 - momentum) * b).max(0.0);
        }
    }

    /// First `n` channels.
    pub fn slice(&self, n: usize) -> (&[f64], &[f64]) {
        (&self.running_mean[..n], &self.running_var[..n])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmsPropConfig {
    pub decay: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig { decay: 0.9, epsilon: 1.0, weight_decay: 1e-4 }
    }
}

/// RMSprop with decoupled weight decay:
/// `acc <- d * acc + (1 - d) * g^2`,
/// `p <- p - lr * g / (sqrt(acc) + eps) - lr * wd * p`.
#[derive(Debug, Clone, Copy)]
pub struct RmsProp {
    pub config: RmsPropConfig,
}

impl RmsProp {
    pub fn new(config: RmsPropConfig) -> Self {
        RmsProp { config }
    }

    /// Updates entries where `mask` is true (all entries when `mask` is `None`).
    pub fn step(&self, params: &mut [f64], grads: &[f64], acc: &mut [f64], lr: f64, mask: Option<&[bool]>) -> Result<()> {
        if params.len() != grads.len() || params.len() != acc.len() || mask.is_some_and(|m| m.len() != params.len()) {
            return Err(Error::Shape("rmsprop buffers differ in length".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numerical("non-finite gradient".into()));
        }
        let RmsPropConfig { decay, epsilon, weight_decay } = self.config;
        for i in 0..params.len() {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            acc[i] = decay * acc[i] + (1.0 - decay) * g * g;
            params[i] -= lr * g / (acc[i].sqrt() + epsilon) + lr * weight_decay * params[i];
        }
        Ok(())
    }
}

/// `0.5 * lr0 * (1 + cos(pi * t / total))`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule needs at least one step".into()));
    }
    if step > total {
        return Err(Error::Config(format!("step {step} is past the schedule end {total}")));
    }
    if step == total {
        return Ok(0.0);
    }
    Ok(0.5 * lr0 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos()))
}
