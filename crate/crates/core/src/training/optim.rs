use serde::{Deserialize, Serialize};

use crate::vit::VitModel;
use crate::{Error, Real, Result};

/// Decoupled-weight-decay Adam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

impl AdamWParams {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && self.weight_decay.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::validation("adamw needs betas in [0, 1), eps > 0, weight_decay >= 0"))
        }
    }
}

pub struct AdamW<T> {
    pub params: AdamWParams,
    m: VitModel<T>,
    v: VitModel<T>,
    step: i32,
}

impl<T: Real> AdamW<T> {
    pub fn new(model: &VitModel<T>, params: AdamWParams) -> Self {
        Self {
            params,
            m: model.zeros_like(),
            v: model.zeros_like(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update of every parameter, decay applied to all of them.
    pub fn step(&mut self, model: &mut VitModel<T>, grads: &VitModel<T>, lr: f64) {
        self.step += 1;
        let p = self.params;
        let bc1 = T::lit(1.0 - p.beta1.powi(self.step));
        let bc2 = T::lit(1.0 - p.beta2.powi(self.step));
        let (b1, b2) = (T::lit(p.beta1), T::lit(p.beta2));
        let (one, lr_t, eps) = (T::one(), T::lit(lr), T::lit(p.eps));
        let decay = T::one() - T::lit(lr * p.weight_decay);
        for ((((_, w), (_, g)), (_, m)), (_, v)) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for k in 0..w.data.len() {
                let gk = g.data[k];
                m.data[k] = b1 * m.data[k] + (one - b1) * gk;
                v.data[k] = b2 * v.data[k] + (one - b2) * gk * gk;
                let mhat = m.data[k] / bc1;
                let vhat = v.data[k] / bc2;
                w.data[k] = w.data[k] * decay - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grads` in place so its global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(grads: &mut VitModel<T>, max_norm: f64) -> T {
    let norm = grads.global_norm();
    let max = T::lit(max_norm);
    if norm > max {
        grads.scale(max / norm);
    }
    norm
}
