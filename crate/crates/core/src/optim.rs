//! SGD with momentum and learning-rate schedules.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// Momentum buffers keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    buffers: BTreeMap<String, Vec<f64>>,
    steps: usize,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn buffer(&self, name: &str) -> Option<&[f64]> {
        self.buffers.get(name).map(Vec::as_slice)
    }
}

/// One update over every `(name, param, grad)`:
/// `v = momentum * v + grad + weight_decay * param; param -= lr * v`.
///
/// Nothing is modified when any gradient is non-finite.
pub fn sgd_step(
    state: &mut OptimizerState,
    updates: &mut [(String, &mut Tensor, &Tensor)],
    hp: SgdParams,
) -> Result<()> {
    for (name, param, grad) in updates.iter() {
        if param.shape() != grad.shape() {
            return Err(Error::shape("sgd_step", param.shape(), grad.shape()));
        }
        if !grad.all_finite() {
            return Err(Error::Divergence {
                step: state.steps,
                what: format!("non-finite gradient for {name}"),
            });
        }
    }
    for (name, param, grad) in updates.iter_mut() {
        let buf = state
            .buffers
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.numel()]);
        for ((p, g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(buf.iter_mut()) {
            *v = hp.momentum * *v + g + hp.weight_decay * *p;
            *p -= hp.lr * *v;
        }
    }
    state.steps += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Schedule {
    /// Cosine decay to 0 over the post-warmup steps.
    Cosine,
    /// Multiply by `factor` at each milestone epoch.
    Step { milestones: Vec<usize>, factor: f64 },
}

/// Learning rate as a function of the global step.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub schedule: Schedule,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub steps_per_epoch: usize,
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base * step as f64 / self.warmup_steps as f64;
        }
        match &self.schedule {
            Schedule::Cosine => {
                let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
                let t = (step - self.warmup_steps).min(span) as f64 / span as f64;
                self.base * 0.5 * (1.0 + math::cos(core::f64::consts::PI * t))
            }
            Schedule::Step { milestones, factor } => {
                let epoch = step / self.steps_per_epoch.max(1);
                let passed = milestones.iter().filter(|&&m| m <= epoch).count();
                let mut lr = self.base;
                for _ in 0..passed {
                    lr *= factor;
                }
                lr
            }
        }
    }
}
