//! SGD with momentum and the cosine learning-rate schedule.

use std::collections::BTreeMap;

use dekan_core::{Parameterized, Scalar, StateKind};

use crate::error::{Result, TrainError};

/// Cosine annealing from `lr0` at epoch 0 to `min_lr` at the last epoch.
pub fn cosine_lr(epoch: usize, epochs: usize, lr0: f64, min_lr: f64) -> Result<f64> {
    if epoch >= epochs {
        return Err(TrainError::Config(format!(
            "epoch {epoch} outside schedule of {epochs} epochs"
        )));
    }
    if epochs == 1 {
        return Ok(lr0);
    }
    let t = epoch as f64 / (epochs - 1) as f64;
    Ok(min_lr + 0.5 * (lr0 - min_lr) * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum SGD with weight decay folded into the velocity:
/// `v <- mu v + (g + lambda theta)`, `theta <- theta - lr v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: BTreeMap::new(),
        }
    }

    pub fn velocity(&self) -> &BTreeMap<String, Vec<T>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, Vec<T>>) {
        self.velocity = velocity;
    }

    /// Applies one update to every trainable parameter of `model`.
    ///
    /// All gradients are checked before anything is modified, so a failed
    /// step leaves parameters and velocity untouched.
    pub fn step(&mut self, model: &mut impl Parameterized<T>, lr: f64) -> Result<()> {
        let mut bad = None;
        model.visit_state("", &mut |name, t, kind| {
            if kind != StateKind::Param || bad.is_some() {
                return;
            }
            match t.grad() {
                Some(g) if g.iter().all(|v| v.is_finite()) => {}
                Some(_) => bad = Some(format!("non-finite gradient in parameter `{name}`")),
                None => bad = Some(format!("parameter `{name}` has no gradient slot")),
            }
        });
        if let Some(msg) = bad {
            return Err(TrainError::Numerical(msg));
        }

        let mu = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        let lr = T::lit(lr);
        let velocity = &mut self.velocity;
        model.visit_state_mut("", &mut |name, t, kind| {
            if kind != StateKind::Param {
                return;
            }
            let v = velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![T::zero(); t.len()]);
            let (theta, g) = t.data_and_grad_mut().expect("checked above");
            for ((p, &gi), vi) in theta.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
                *vi = mu * *vi + (gi + wd * *p);
                *p = *p - lr * *vi;
            }
        });
        Ok(())
    }
}
