//! Change detection with CAR-partitioned specialists and multi-teacher
//! distillation.
//!
//! The pipeline this crate implements:
//!
//! 1. Train an original model on the full training set.
//! 2. Partition the training set by Change Area Ratio (CAR) — the fraction
//!    of changed pixels per image — and train one specialist teacher per
//!    partition.
//! 3. Either route each test pair to a specialist using the original
//!    model's rough CAR estimate (two-stage inference), or distill all
//!    teachers into a single student that is initialized from the original
//!    model and supervised per sample by the CAR-appropriate teacher.
//!
//! Everything runs on a small built-in tensor core with reverse-mode
//! gradients ([`numerics`]), two miniature fully-convolutional
//! architectures ([`models`]), and an evaluation protocol that averages
//! two-class metrics per image ([`metrics`]).

pub mod car;

pub mod data;
pub mod error;
pub mod metrics;

pub mod models;
pub mod numerics;
pub mod rng;



pub use error::{Error, Result};
