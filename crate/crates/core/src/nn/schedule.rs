use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing from `lr0` to `min_lr` over `total_steps`, no restarts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl LrSchedule {
    pub fn new(lr0: f64, total_steps: u64, min_lr: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::config("total_steps must be positive"));
        }
        if !(0.0 <= min_lr && min_lr <= lr0) {
            return Err(Error::config(format!("need 0 <= min_lr ({min_lr}) <= lr0 ({lr0})")));
        }
        Ok(Self {
            lr0,
            total_steps,
            min_lr,
        })
    }

    pub fn lr(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} outside [0, {}]",
                self.total_steps
            )));
        }
        let phase = std::f64::consts::PI * step as f64 / self.total_steps as f64;
        Ok(self.min_lr + 0.5 * (self.lr0 - self.min_lr) * (1.0 + phase.cos()))
    }
}

pub fn cosine_lr(sched: &LrSchedule, step: u64) -> Result<f64> {
    sched.lr(step)
}
