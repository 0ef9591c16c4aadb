//! Adam with inverse-time learning-rate decay.
//!
//! The step size at update `t` (0-based) is `lr / (1 + decay * t)`; moments
//! are bias-corrected as usual.

use serde::{Deserialize, Serialize};

use super::{GradientSet, SegNetwork, TENSOR_NAMES};
use crate::error::{Result, SfsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(SfsError::Config(format!("bad Adam hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Update a list of parameter tensors in place. Nothing is modified when
    /// any gradient is non-finite.
    pub fn update(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
            return Err(SfsError::Dimension(
                "gradient tensors do not match parameters".into(),
            ));
        }
        if let Some(t) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            let name = TENSOR_NAMES
                .get(t)
                .map_or_else(|| format!("#{t}"), |s| s.to_string());
            return Err(SfsError::NonFiniteGradient(name));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
        {
            return Err(SfsError::Dimension(
                "optimizer state belongs to different parameters".into(),
            ));
        }

        let c = self.config;
        let lr = c.lr / (1.0 + c.decay * self.step as f64);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

/// One Adam step on every parameter tensor of `net`.
pub fn sgd_step(net: &mut SegNetwork, grads: &GradientSet, optimizer: &mut Adam) -> Result<()> {
    optimizer.update(net.tensors_mut(), &grads.tensors)
}
