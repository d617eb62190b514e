use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::{Error, Result};

/// Learning-rate schedule over optimizer steps `1..=total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Schedule {
    Constant,
    /// Linear warmup over `ceil(warmup_frac · total_steps)` steps, then
    /// linear decay that reaches zero just after the last step.
    WarmupLinear {
        total_steps: u64,
        warmup_frac: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to tensors of rank 2 or more (biases
    /// and layer-norm parameters are exempt).
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
}

impl AdamConfig {
    pub fn new(lr: f64, total_steps: u64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            schedule: Schedule::WarmupLinear {
                total_steps,
                warmup_frac: 0.01,
            },
        }
    }

    /// Plain Adam: constant rate, no decay, no clipping.
    pub fn plain(lr: f64) -> Self {
        Self {
            weight_decay: 0.0,
            clip_norm: None,
            schedule: Schedule::Constant,
            ..Self::new(lr, 1)
        }
    }

    /// Rate used by optimizer step `t` (1-based).
    pub fn lr_at(&self, t: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::WarmupLinear {
                total_steps,
                warmup_frac,
            } => {
                let total = total_steps.max(1) as f64;
                let warmup = (warmup_frac * total).ceil().max(1.0);
                let t = t as f64;
                if t <= warmup {
                    self.lr * t / warmup
                } else {
                    self.lr * ((total - t + 1.0) / (total - warmup + 1.0)).max(0.0)
                }
            }
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Number of steps taken so far.
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update. `grads` is in store order; every entry must be
    /// present. Returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Vec<f64>>]) -> Result<f64> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}, got {} gradients",
                self.m.len(),
                store.len(),
                grads.len()
            )));
        }
        let mut present = Vec::with_capacity(grads.len());
        for (id, g) in store.ids().zip(grads) {
            match g {
                Some(g) if g.len() == store.get(id).len() => present.push(g.as_slice()),
                Some(g) => {
                    return Err(Error::Contract(format!(
                        "gradient for {} has {} entries, parameter has {}",
                        store.name(id),
                        g.len(),
                        store.get(id).len()
                    )))
                }
                None => {
                    return Err(Error::Contract(format!(
                        "missing gradient for parameter {}",
                        store.name(id)
                    )))
                }
            }
        }
        let c = self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let norm = present
                    .iter()
                    .flat_map(|g| g.iter())
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.t += 1;
        let lr = c.lr_at(self.t);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let decay = if store.get(id).rank() >= 2 {
                c.weight_decay
            } else {
                0.0
            };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let g = present[k][i] * scale;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.eps);
                p[i] -= lr * (update + decay * p[i]);
            }
        }
        Ok(lr)
    }
}
