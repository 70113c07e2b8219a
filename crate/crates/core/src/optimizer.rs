//! Nesterov accelerated gradient with a step-decay learning-rate schedule.
//!
//! The update is the Sutskever reformulation, which only needs gradients at
//! the stored parameters:
//!
//! ```text
//! v ← μ·v − lr·g
//! θ ← θ + μ·v − lr·g
//! ```
//!
//! The stored `θ` is the look-ahead point `θ_classic + μ·v` of the textbook
//! form `v ← μ·v − lr·∇f(θ + μ·v); θ ← θ + v`, so both produce the same
//! velocity sequence.

use crate::embednet::{EmbeddingNet, ParamGrads};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    /// The learning rate is divided by this factor once per period.
    pub decay_factor: f64,
    pub decay_period: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { base_lr: 0.1, decay_factor: 10.0, decay_period: 30 }
    }
}

impl Schedule {
    /// `lr₀ / factor^⌊epoch/period⌋`. Dividing by an exact power keeps the
    /// plateaus at the decimal values (0.1, 0.01, 0.001) in binary floating
    /// point, where repeated multiplication by 0.1 would not.
    pub fn lr_at(&self, epoch: u64) -> f64 {
        let steps = if self.decay_period == 0 { 0 } else { epoch / self.decay_period };
        self.base_lr / self.decay_factor.powi(steps as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::arg(format!("lr0 must be positive, got {}", self.base_lr)));
        }
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::arg(format!("lr_decay must be at least 1, got {}", self.decay_factor)));
        }
        if self.decay_period == 0 {
            return Err(Error::arg("lr_decay_period must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub velocity: Vec<Vec<f64>>,
    pub momentum: f64,
    pub schedule: Schedule,
    pub epoch: u64,
}

impl OptState {
    pub fn new(net: &EmbeddingNet, momentum: f64, schedule: Schedule) -> Result<Self> {
        schedule.validate()?;
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::arg(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(OptState {
            velocity: net.trainable().iter().map(|t| vec![0.0; t.len()]).collect(),
            momentum,
            schedule,
            epoch: 0,
        })
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.lr_at(self.epoch)
    }
}

/// One Nesterov step over flat tensors. Gradients are validated before
/// anything is written, so a rejected step leaves parameters and velocity
/// untouched.
pub fn nesterov_step(params: &mut [&mut [f64]], grads: &[Vec<f64>], velocity: &mut [Vec<f64>], momentum: f64, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::consistency(format!(
            "{} parameter tensors, {} gradients, {} velocities",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(velocity.iter()).enumerate() {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::consistency(format!("tensor {i}: shape mismatch")));
        }
    }
    for (p, (g, v)) in params.iter_mut().zip(grads.iter().zip(velocity.iter_mut())) {
        for ((pj, &gj), vj) in p.iter_mut().zip(g).zip(v.iter_mut()) {
            *vj = momentum * *vj - lr * gj;
            *pj += momentum * *vj - lr * gj;
        }
    }
    Ok(())
}

/// Applies one step to a network at the current epoch's learning rate.
pub fn step(net: &mut EmbeddingNet, grads: &ParamGrads, state: &mut OptState) -> Result<()> {
    let ids = net.tensor_ids();
    for (id, g) in ids.iter().zip(&grads.tensors) {
        if let Some(v) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite gradient {v} in {id}")));
        }
    }
    let lr = state.current_lr();
    let momentum = state.momentum;
    let mut params = net.trainable_mut();
    nesterov_step(&mut params, &grads.tensors, &mut state.velocity, momentum, lr)?;
    drop(params);
    if !net.is_finite() {
        return Err(Error::numeric("parameters became non-finite after an optimizer step"));
    }
    Ok(())
}
