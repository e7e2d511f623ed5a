//! Adam with a global gradient-norm clip, two learning-rate groups, and a
//! reduce-on-plateau schedule driven by validation loss.

use serde::{Deserialize, Serialize};

use super::graph::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr_main: f64,
    pub lr_projection: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr_main: 1e-3,
            lr_projection: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Optimizer state: Adam moments per parameter plus the plateau scheduler.
#[derive(Debug, Clone)]
pub struct OptimState {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    lr_scale: f64,
    sched_patience: usize,
    sched_factor: f64,
    sched_best: f64,
    sched_since: usize,
}

impl OptimState {
    pub fn new(store: &ParamStore, cfg: AdamConfig, sched_patience: usize, sched_factor: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::InvalidConfig(format!(
                "adam betas must be in [0,1): {}, {}",
                cfg.beta1, cfg.beta2
            )));
        }
        if cfg.lr_main <= 0.0 || cfg.lr_projection <= 0.0 || cfg.eps <= 0.0 || cfg.clip_norm <= 0.0
        {
            return Err(Error::InvalidConfig(
                "adam rates, eps and clip norm must be positive".to_string(),
            ));
        }
        if !(0.0 < sched_factor && sched_factor < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "plateau factor must be in (0,1), got {sched_factor}"
            )));
        }
        let m = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        let v = store
            .iter()
            .map(|(_, p)| vec![0.0; p.value.numel()])
            .collect();
        Ok(OptimState {
            cfg,
            m,
            v,
            step: 0,
            lr_scale: 1.0,
            sched_patience,
            sched_factor,
            sched_best: f64::INFINITY,
            sched_since: 0,
        })
    }

    /// Clips the global gradient norm, applies one Adam update, and zeroes
    /// the gradients. Errors if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        let mut sq = 0.0;
        for (_, p) in store.iter() {
            for &g in &p.grad {
                sq += g * g;
            }
        }
        if !sq.is_finite() {
            return Err(Error::TrainingDiverged(
                "non-finite gradient norm".to_string(),
            ));
        }
        let norm = sq.sqrt();
        let rescale = if norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let lr = self.lr_scale
                * match p.group {
                    ParamGroup::Projection => self.cfg.lr_projection,
                    ParamGroup::Main => self.cfg.lr_main,
                };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let values = p.value.data_mut();
            for j in 0..values.len() {
                let g = p.grad[j] * rescale;
                m[j] = self.cfg.beta1 * m[j] + (1.0 - self.cfg.beta1) * g;
                v[j] = self.cfg.beta2 * v[j] + (1.0 - self.cfg.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                values[j] -= lr * mhat / (vhat.sqrt() + self.cfg.eps);
                p.grad[j] = 0.0;
            }
        }
        Ok(())
    }

    /// Plateau schedule: halves the effective rate (multiplies by the
    /// configured factor) when validation loss has not improved for
    /// `sched_patience` consecutive epochs. Returns true when it fired.
    pub fn observe_val_loss(&mut self, val_loss: f64) -> bool {
        if val_loss < self.sched_best {
            self.sched_best = val_loss;
            self.sched_since = 0;
            return false;
        }
        self.sched_since += 1;
        if self.sched_since >= self.sched_patience {
            self.lr_scale *= self.sched_factor;
            self.sched_since = 0;
            return true;
        }
        false
    }

    pub fn lr_scale(&self) -> f64 {
        self.lr_scale
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}
