//! Reverse-mode differentiable tensor core.
//!
//! Deliberately minimal: dense row-major tensors, the handful of operations
//! the change-detection models and losses need, an AdamW optimizer, warmup
//! schedules, and a finite-difference gradient checker. Everything is
//! deterministic; identical inputs give bit-identical outputs.

mod gradcheck;
mod kernels;
mod ops;
mod optim;
mod scalar;
mod schedule;
mod tensor;

pub use gradcheck::{grad_check, grad_check_sampled};
pub use ops::{bce_loss, conv2d, mse_loss, BCE_EPS};
pub use optim::{AdamW, AdamWConfig};
pub use scalar::Scalar;
pub use schedule::{DecayKind, LrSchedule};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
