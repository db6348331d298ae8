//! Adam optimizer with global gradient-norm clipping.
//!
//! State (first and second moments, step count) is keyed by parameter
//! position, so callers must present parameters in the same order every
//! step; the model's parameter visitation order is deterministic, which
//! is also what makes training runs reproducible.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Maximum global L2 norm of the concatenated gradient; `None`
    /// disables clipping.
    pub clip_norm: Option<f64>,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }

    pub fn with_clip(mut self, clip: f64) -> Self {
        self.clip_norm = Some(clip);
        self
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
    pub clipped: bool,
}

pub struct Adam {
    cfg: AdamConfig,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Applies one update to every parameter, consuming the gradients left
    /// by `backward` (parameters a loss never touched see zero gradient).
    /// Each tensor is replaced by a fresh leaf, which both frees the old
    /// graph and leaves the new parameters with clean gradient slots.
    pub fn step(&mut self, params: &mut [(&str, &mut Tensor)]) -> Result<StepStats> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
            self.v = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        } else if self.m.len() != params.len() {
            return Err(Error::invalid(
                "adam",
                format!("optimizer has state for {} params, got {}", self.m.len(), params.len()),
            ));
        }

        let grads: Vec<Vec<f64>> = params.iter().map(|(_, p)| p.grad_or_zeros()).collect();
        let sq: f64 = grads.iter().flat_map(|g| g.iter()).map(|g| g * g).sum();
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite { op: "adam" });
        }
        let (scale, clipped) = match self.cfg.clip_norm {
            Some(c) if norm > c => (c / norm, true),
            _ => (1.0, false),
        };

        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (((name, p), g), (m, v)) in params
            .iter_mut()
            .zip(&grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if m.len() != p.numel() {
                return Err(Error::invalid(
                    "adam",
                    format!("parameter {name} changed size mid-run"),
                ));
            }
            let mut w = p.to_vec();
            for i in 0..w.len() {
                let gi = g[i] * scale;
                m[i] = self.cfg.beta1 * m[i] + (1.0 - self.cfg.beta1) * gi;
                v[i] = self.cfg.beta2 * v[i] + (1.0 - self.cfg.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= self.cfg.lr * mhat / (vhat.sqrt() + self.cfg.eps);
            }
            let shape = p.shape().to_vec();
            **p = Tensor::param(w, &shape)?;
        }
        Ok(StepStats { grad_norm: norm, clipped })
    }
}
