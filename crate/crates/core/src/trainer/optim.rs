use serde::{Deserialize, Serialize};

use crate::diff::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    AdamW,
}

pub const ADAM_EPS: f64 = 1e-8;

/// Hyperparameters shared by both optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
}

/// SGD with momentum and L2 weight decay added to the gradient, or AdamW
/// with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    /// Update count.
    pub t: u64,
    /// First-moment buffer per parameter (momentum buffer for SGD).
    pub m: Vec<Vec<f64>>,
    /// Second-moment buffer per parameter (empty for SGD).
    pub v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Self {
        let m = params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        let v = match config.kind {
            OptimizerKind::AdamW => params.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect(),
            OptimizerKind::Sgd => Vec::new(),
        };
        Optimizer { config, t: 0, m, v }
    }

    /// Applies one update with learning rate `lr` using the gradients stored in `params`.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::config("optimizer state does not match the parameter set"));
        }
        self.t += 1;
        let c = self.config;
        for (i, (_, p)) in params.iter_mut().enumerate() {
            if p.frozen {
                continue;
            }
            let m = &mut self.m[i];
            let w = p.value.data_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for j in 0..w.len() {
                        let g = p.grad[j] + c.weight_decay * w[j];
                        m[j] = c.momentum * m[j] + g;
                        w[j] -= lr * m[j];
                    }
                }
                OptimizerKind::AdamW => {
                    let v = &mut self.v[i];
                    let (b1, b2) = c.betas;
                    let bc1 = 1.0 - b1.powi(self.t as i32);
                    let bc2 = 1.0 - b2.powi(self.t as i32);
                    for j in 0..w.len() {
                        let g = p.grad[j];
                        w[j] -= lr * c.weight_decay * w[j];
                        m[j] = b1 * m[j] + (1.0 - b1) * g;
                        v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        w[j] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(params: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .filter(|(_, p)| !p.frozen)
        .flat_map(|(_, p)| p.grad.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (_, p) in params.iter_mut() {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}
