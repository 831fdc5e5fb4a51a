//! Training-time augmentation: axis-aligned rotations, flips, photometric
//! jitter.
//!
//! Rotations are restricted to multiples of 90 degrees so the label stays
//! exactly binary (no interpolation). Geometric transforms are applied
//! identically to both images and the label; photometric jitter is applied
//! identically to both images and never touches the label.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BitemporalSample, Image};
use crate::models::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub rotate_prob: f64,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
    pub photometric_prob: f64,
    /// Brightness offset drawn from `[-brightness_delta, brightness_delta]`.
    pub brightness_delta: f64,
    /// Contrast scale drawn from this range, applied around 0.5.
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotate_prob: 0.5,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
            photometric_prob: 0.5,
            brightness_delta: 0.125,
            contrast_range: (0.75, 1.25),
        }
    }
}

impl AugmentConfig {
    /// Configuration under which `augment` is the identity.
    pub fn disabled() -> Self {
        AugmentConfig {
            rotate_prob: 0.0,
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            photometric_prob: 0.0,
            ..AugmentConfig::default()
        }
    }
}

fn remap<F>(h: usize, w: usize, nh: usize, nw: usize, src: &[f32], map: F) -> Vec<f32>
where
    F: Fn(usize, usize) -> (usize, usize),
{
    let mut out = vec![0.0f32; 3 * nh * nw];
    for c in 0..3 {
        for y in 0..nh {
            for x in 0..nw {
                let (sy, sx) = map(y, x);
                out[c * nh * nw + y * nw + x] = src[c * h * w + sy * w + sx];
            }
        }
    }
    out
}

fn remap_mask<F>(_h: usize, w: usize, nh: usize, nw: usize, src: &[u8], map: F) -> Vec<u8>
where
    F: Fn(usize, usize) -> (usize, usize),
{
    let mut out = vec![0u8; nh * nw];
    for y in 0..nh {
        for x in 0..nw {
            let (sy, sx) = map(y, x);
            out[y * nw + x] = src[sy * w + sx];
        }
    }
    out
}

/// Rotate by `k * 90` degrees counterclockwise.
pub fn rotate90(sample: &BitemporalSample, k: usize) -> BitemporalSample {
    let k = k % 4;
    if k == 0 {
        return sample.clone();
    }
    let (h, w) = (sample.image_a.height(), sample.image_a.width());
    let (nh, nw) = if k % 2 == 0 { (h, w) } else { (w, h) };
    // Source pixel feeding output (y, x), for each quarter turn.
    let map = move |y: usize, x: usize| -> (usize, usize) {
        match k {
            1 => (x, w - 1 - y),
            2 => (h - 1 - y, w - 1 - x),
            _ => (h - 1 - x, y),
        }
    };
    apply_geometric(sample, nh, nw, map)
}

pub fn flip_horizontal(sample: &BitemporalSample) -> BitemporalSample {
    let (h, w) = (sample.image_a.height(), sample.image_a.width());
    apply_geometric(sample, h, w, move |y, x| (y, w - 1 - x))
}

pub fn flip_vertical(sample: &BitemporalSample) -> BitemporalSample {
    let (h, w) = (sample.image_a.height(), sample.image_a.width());
    apply_geometric(sample, h, w, move |y, x| (h - 1 - y, x))
}

fn apply_geometric<F>(sample: &BitemporalSample, nh: usize, nw: usize, map: F) -> BitemporalSample
where
    F: Fn(usize, usize) -> (usize, usize),
{
    let (h, w) = (sample.image_a.height(), sample.image_a.width());
    BitemporalSample {
        id: sample.id.clone(),
        image_a: Image::new(nh, nw, remap(h, w, nh, nw, sample.image_a.data(), &map))
            .expect("remap preserves element count"),
        image_b: Image::new(nh, nw, remap(h, w, nh, nw, sample.image_b.data(), &map))
            .expect("remap preserves element count"),
        label: BinaryMask::new(nh, nw, remap_mask(h, w, nh, nw, sample.label.values(), &map))
            .expect("remap preserves binarity"),
    }
}

fn jitter_image(img: &mut Image, delta: f32, contrast: f32) {
    for v in img.data_mut() {
        let brightened = *v + delta;
        *v = ((brightened - 0.5) * contrast + 0.5).clamp(0.0, 1.0);
    }
}

/// Randomized augmentation of one sample. Draw order is fixed (rotate, k,
/// hflip, vflip, photometric, brightness, contrast) so a given RNG state
/// always produces the same transform.
pub fn augment(
    sample: &BitemporalSample,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> BitemporalSample {
    let mut out = sample.clone();
    if config.rotate_prob > 0.0 && rng.gen_bool(config.rotate_prob) {
        let k = rng.gen_range(0..4usize);
        out = rotate90(&out, k);
    }
    if config.hflip_prob > 0.0 && rng.gen_bool(config.hflip_prob) {
        out = flip_horizontal(&out);
    }
    if config.vflip_prob > 0.0 && rng.gen_bool(config.vflip_prob) {
        out = flip_vertical(&out);
    }
    if config.photometric_prob > 0.0 && rng.gen_bool(config.photometric_prob) {
        let delta = rng.gen_range(-config.brightness_delta..=config.brightness_delta) as f32;
        let (lo, hi) = config.contrast_range;
        let contrast = rng.gen_range(lo..hi) as f32;
        jitter_image(&mut out.image_a, delta, contrast);
        jitter_image(&mut out.image_b, delta, contrast);
    }
    out
}
