//! Finite-difference verification of analytic gradients.
//!
//! Runs in f64: central differences in f32 drown in rounding noise. The
//! harness recomputes the forward pass from scratch for every probe, so it
//! is independent of the reverse-mode path it is checking.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Relative-error floor: differences below this scale count as zero.
const ERROR_FLOOR: f64 = 1e-8;

/// Compare analytic gradients of `f` against central finite differences at
/// every element of every input; returns the maximum relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// Inputs must be `requires_grad` leaves; `f` must produce a scalar.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let probes: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| (0..t.elem_count()).collect())
        .collect();
    grad_check_at(f, inputs, eps, &probes)
}

/// Like [`grad_check`], but probing at most `max_per_tensor` elements per
/// input, chosen deterministically from `seed`. Analytic gradients are still
/// computed everywhere; only the finite-difference probes are subsampled.
pub fn grad_check_sampled<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_per_tensor: usize,
    seed: u64,
) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.elem_count();
            if n <= max_per_tensor {
                (0..n).collect()
            } else {
                // Partial Fisher-Yates over the index range.
                let mut idx: Vec<usize> = (0..n).collect();
                for i in 0..max_per_tensor {
                    let j = rng.gen_range(i..n);
                    idx.swap(i, j);
                }
                let mut chosen = idx[..max_per_tensor].to_vec();
                chosen.sort_unstable();
                chosen
            }
        })
        .collect();
    grad_check_at(f, inputs, eps, &probes)
}

fn grad_check_at<F>(f: F, inputs: &[Tensor<f64>], eps: f64, probes: &[Vec<usize>]) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if eps <= 0.0 {
        return Err(Error::arg("grad_check eps must be positive".to_string()));
    }

    for t in inputs {
        t.zero_grad();
    }
    let loss = f(inputs)?;
    let base = loss.item()?;
    if !base.is_finite() {
        return Err(Error::arg(format!("non-finite loss {base} in grad_check")));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.elem_count()]))
        .collect();

    let mut max_rel = 0.0f64;
    for (ti, t) in inputs.iter().enumerate() {
        for &i in &probes[ti] {
            let orig = t.data()[i];
            t.data_mut()[i] = orig + eps;
            let plus = f(inputs)?.item()?;
            t.data_mut()[i] = orig - eps;
            let minus = f(inputs)?.item()?;
            t.data_mut()[i] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::arg(
                    "non-finite value during finite-difference probe".to_string(),
                ));
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[ti][i];
            if !a.is_finite() {
                return Err(Error::arg(format!("non-finite analytic gradient {a}")));
            }
            let denom = a.abs().max(numeric.abs()).max(ERROR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
