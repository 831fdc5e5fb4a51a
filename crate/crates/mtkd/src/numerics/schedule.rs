//! Learning-rate schedules: linear warmup followed by linear or cosine decay
//! to zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DecayKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for DecayKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(DecayKind::Linear),
            "cosine" => Ok(DecayKind::Cosine),
            other => Err(Error::arg(format!(
                "unknown lr schedule kind '{other}' (expected 'linear' or 'cosine')"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub kind: DecayKind,
    pub warmup_iters: usize,
    pub max_iters: usize,
    pub warmup_start_lr: f64,
    pub initial_lr: f64,
}

impl LrSchedule {
    pub fn new(
        kind: DecayKind,
        warmup_iters: usize,
        max_iters: usize,
        warmup_start_lr: f64,
        initial_lr: f64,
    ) -> Result<Self> {
        if warmup_iters == 0 || warmup_iters >= max_iters {
            return Err(Error::arg(format!(
                "lr schedule needs 0 < warmup_iters < max_iters, got {warmup_iters} / {max_iters}"
            )));
        }
        if warmup_start_lr < 0.0 || initial_lr < 0.0 {
            return Err(Error::arg("learning rates must be >= 0".to_string()));
        }
        Ok(LrSchedule {
            kind,
            warmup_iters,
            max_iters,
            warmup_start_lr,
            initial_lr,
        })
    }

    /// Learning rate at `iter`. Ramps linearly from `warmup_start_lr` to
    /// `initial_lr` over the warmup, then decays to exactly 0 at `max_iters`.
    pub fn lr_at(&self, iter: usize) -> Result<f64> {
        if iter > self.max_iters {
            return Err(Error::arg(format!(
                "iteration {} is past max_iters {}",
                iter, self.max_iters
            )));
        }
        if iter <= self.warmup_iters {
            let frac = iter as f64 / self.warmup_iters as f64;
            return Ok(self.warmup_start_lr + (self.initial_lr - self.warmup_start_lr) * frac);
        }
        let frac = (iter - self.warmup_iters) as f64 / (self.max_iters - self.warmup_iters) as f64;
        Ok(match self.kind {
            DecayKind::Linear => self.initial_lr * (1.0 - frac),
            DecayKind::Cosine => self.initial_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        })
    }
}
