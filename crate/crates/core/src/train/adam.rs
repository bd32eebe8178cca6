//! Adam with bias correction.

use crate::error::{HopeError, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};

fn default_lr() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }
}

/// Per-parameter moment accumulators. Slot order must match the model's
/// canonical parameter order.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    cfg: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: usize,
}

impl<T: Real> OptimState<T> {
    pub fn new(cfg: AdamConfig, param_lens: &[usize]) -> Self {
        OptimState {
            cfg,
            m: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: param_lens.iter().map(|&n| vec![T::zero(); n]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// One bias-corrected update across all slots.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(HopeError::ShapeMismatch {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        self.step += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let lr = T::from_f64(self.cfg.lr);
        let eps = T::from_f64(self.cfg.eps);
        let wd = T::from_f64(self.cfg.weight_decay);
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powi(self.step as i32));
        for (slot, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            if param.len() != grad.len() || param.len() != self.m[slot].len() {
                return Err(HopeError::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![param.len()],
                    rhs: vec![grad.len(), self.m[slot].len()],
                });
            }
            for j in 0..param.len() {
                let g = grad[j] + wd * param[j];
                self.m[slot][j] = b1 * self.m[slot][j] + (T::one() - b1) * g;
                self.v[slot][j] = b2 * self.v[slot][j] + (T::one() - b2) * g * g;
                let m_hat = self.m[slot][j] / corr1;
                let v_hat = self.v[slot][j] / corr2;
                param[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
