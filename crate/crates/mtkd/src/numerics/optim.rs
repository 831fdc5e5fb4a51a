//! AdamW with decoupled weight decay.

use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults: beta1 = 0.9, beta2 = 0.99,
/// eps = 1e-8, weight_decay = 0.01.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

struct Slot<T: Scalar> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state: first/second moment buffers mirroring each parameter,
/// plus the step counter.
pub struct AdamW<T: Scalar> {
    cfg: AdamWConfig,
    t: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &[Tensor<T>], cfg: AdamWConfig) -> Self {
        let slots = params
            .iter()
            .map(|p| Slot {
                m: vec![T::ZERO; p.elem_count()],
                v: vec![T::ZERO; p.elem_count()],
            })
            .collect();
        AdamW { cfg, t: 0, slots }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn config(&self) -> AdamWConfig {
        self.cfg
    }

    /// One update over `params`, reading each parameter's accumulated
    /// gradient (a missing gradient counts as zero):
    ///
    /// ```text
    /// m <- b1*m + (1-b1)*g        v <- b2*v + (1-b2)*g^2
    /// p <- p - lr * ( m_hat / (sqrt(v_hat) + eps) + weight_decay * p )
    /// ```
    ///
    /// with the usual bias-corrected `m_hat = m / (1 - b1^t)` and
    /// `v_hat = v / (1 - b2^t)`.
    pub fn step(&mut self, params: &[Tensor<T>], lr: f64) -> Result<()> {
        if lr < 0.0 {
            return Err(Error::arg(format!("learning rate must be >= 0, got {}", lr)));
        }
        if params.len() != self.slots.len() {
            return Err(Error::arg(format!(
                "optimizer has state for {} parameters, got {}",
                self.slots.len(),
                params.len()
            )));
        }
        self.t += 1;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let one_m_b1 = T::ONE - b1;
        let one_m_b2 = T::ONE - b2;
        let eps = T::from_f64(self.cfg.eps);
        let wd = T::from_f64(self.cfg.weight_decay);
        let lr_t = T::from_f64(lr);
        let corr1 = T::from_f64(1.0 - self.cfg.beta1.powi(self.t as i32));
        let corr2 = T::from_f64(1.0 - self.cfg.beta2.powi(self.t as i32));

        for (p, slot) in params.iter().zip(self.slots.iter_mut()) {
            let grad = p.grad();
            let mut data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(T::ZERO, |g| g[i]);
                slot.m[i] = b1 * slot.m[i] + one_m_b1 * g;
                slot.v[i] = b2 * slot.v[i] + one_m_b2 * g * g;
                let m_hat = slot.m[i] / corr1;
                let v_hat = slot.v[i] / corr2;
                data[i] = data[i] - lr_t * (m_hat / (v_hat.sqrt() + eps) + wd * data[i]);
            }
        }
        Ok(())
    }
}
