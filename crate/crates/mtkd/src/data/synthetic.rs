//! Synthetic bitemporal pairs with controllable change area ratio.
//!
//! Each sample is a smoothly shaded background; the post-event image
//! repaints randomly placed shapes (rectangles/ellipses) in contrasting
//! colors. The label is the exact union of repainted pixels, so the
//! achieved CAR is recomputed from the emitted mask rather than assumed.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{BitemporalSample, Dataset, Image, SplitTag};
use crate::error::{Error, Result};
use crate::models::BinaryMask;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// Where the per-sample CAR targets come from.
#[derive(Debug, Clone, PartialEq)]
pub enum CarDistribution {
    /// Uniform in `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
    /// Weighted choice among fixed targets.
    Targets(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub count: usize,
    /// Images are `size x size`; must be divisible by 4.
    pub size: usize,
    pub car_distribution: CarDistribution,
    /// Per-pixel jitter amplitude in normalized units.
    pub noise: f64,
    pub shapes: Vec<ShapeKind>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            count: 100,
            size: 32,
            car_distribution: CarDistribution::Uniform { lo: 0.0, hi: 0.6 },
            noise: 0.02,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse],
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::arg("synthetic spec needs count >= 1".to_string()));
        }
        if self.size < 4 || self.size % 4 != 0 {
            return Err(Error::arg(format!(
                "synthetic size must be a positive multiple of 4, got {}",
                self.size
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::arg("synthetic spec needs a nonempty shape vocabulary".to_string()));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::arg(format!("noise must be in [0,1], got {}", self.noise)));
        }
        match &self.car_distribution {
            CarDistribution::Uniform { lo, hi } => {
                if !(0.0..=1.0).contains(lo) || !(0.0..=1.0).contains(hi) || lo > hi {
                    return Err(Error::arg(format!(
                        "uniform CAR range [{lo}, {hi}] is not a subrange of [0, 1]"
                    )));
                }
            }
            CarDistribution::Targets(targets) => {
                if targets.is_empty() {
                    return Err(Error::arg("CAR target list is empty".to_string()));
                }
                for (car, weight) in targets {
                    if !(0.0..=1.0).contains(car) {
                        return Err(Error::arg(format!("CAR target {car} outside [0, 1]")));
                    }
                    if *weight <= 0.0 {
                        return Err(Error::arg(format!("CAR target weight {weight} must be positive")));
                    }
                }
            }
        }
        Ok(())
    }

    fn draw_car(&self, rng: &mut ChaCha8Rng) -> f64 {
        match &self.car_distribution {
            CarDistribution::Uniform { lo, hi } => {
                if lo == hi {
                    *lo
                } else {
                    rng.gen_range(*lo..*hi)
                }
            }
            CarDistribution::Targets(targets) => {
                let total: f64 = targets.iter().map(|(_, w)| w).sum();
                let mut pick = rng.gen_range(0.0..total);
                for (car, w) in targets {
                    if pick < *w {
                        return *car;
                    }
                    pick -= w;
                }
                targets.last().expect("targets validated nonempty").0
            }
        }
    }
}

/// Integer changed-pixel budget for a CAR target, or an error when no pixel
/// count lands within 20% relative of the target at this image size.
fn pixel_budget(car: f64, total: usize) -> Result<usize> {
    if car == 0.0 {
        return Ok(0);
    }
    if car == 1.0 {
        return Ok(total);
    }
    let lo = (0.8 * car * total as f64).ceil() as usize;
    let hi = (1.2 * car * total as f64).floor() as usize;
    if lo > hi || hi == 0 {
        return Err(Error::arg(format!(
            "CAR target {car} is unreachable at {total} pixels: no count lies within 20% relative"
        )));
    }
    let ideal = (car * total as f64).round() as usize;
    Ok(ideal.clamp(lo.max(1), hi))
}

struct Palette {
    base: [f64; 3],
    grad_x: [f64; 3],
    grad_y: [f64; 3],
}

fn draw_palette(rng: &mut ChaCha8Rng) -> Palette {
    let mut base = [0.0; 3];
    let mut gx = [0.0; 3];
    let mut gy = [0.0; 3];
    for c in 0..3 {
        base[c] = rng.gen_range(64.0..192.0);
        gx[c] = rng.gen_range(-40.0..40.0);
        gy[c] = rng.gen_range(-40.0..40.0);
    }
    Palette {
        base,
        grad_x: gx,
        grad_y: gy,
    }
}

fn shaded_image(palette: &Palette, size: usize, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![0.0f64; 3 * size * size];
    let amp = noise * 255.0;
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let shade = palette.base[c]
                    + palette.grad_x[c] * (x as f64 / size as f64)
                    + palette.grad_y[c] * (y as f64 / size as f64);
                let jitter = if amp > 0.0 { rng.gen_range(-amp..amp) } else { 0.0 };
                img[c * size * size + y * size + x] = shade + jitter;
            }
        }
    }
    img
}

/// Mark a shape's pixels in `scratch`; returns how many were not yet set in
/// `mask`.
fn render_shape(
    kind: ShapeKind,
    size: usize,
    area: usize,
    rng: &mut ChaCha8Rng,
    mask: &[bool],
    scratch: &mut Vec<usize>,
) {
    scratch.clear();
    match kind {
        ShapeKind::Rectangle => {
            let rw = ((area as f64).sqrt().ceil() as usize).clamp(1, size);
            let rh = area.div_ceil(rw).clamp(1, size);
            let top = rng.gen_range(0..=(size - rh));
            let left = rng.gen_range(0..=(size - rw));
            let mut remaining = area;
            'outer: for y in top..top + rh {
                for x in left..left + rw {
                    if remaining == 0 {
                        break 'outer;
                    }
                    scratch.push(y * size + x);
                    remaining -= 1;
                }
            }
        }
        ShapeKind::Ellipse => {
            // pi * rx * ry ~= area; draw then trim the overshoot.
            let r = ((area as f64) / std::f64::consts::PI).sqrt().max(0.5);
            let aspect = rng.gen_range(0.6..1.6);
            let rx = (r * aspect).max(0.5);
            let ry = (r / aspect).max(0.5);
            let cx = rng.gen_range(0.0..size as f64);
            let cy = rng.gen_range(0.0..size as f64);
            for y in 0..size {
                for x in 0..size {
                    let dx = (x as f64 + 0.5 - cx) / rx;
                    let dy = (y as f64 + 0.5 - cy) / ry;
                    if dx * dx + dy * dy <= 1.0 {
                        scratch.push(y * size + x);
                    }
                }
            }
            // Keep at most `area` new pixels so the budget cannot overshoot.
            let mut kept = Vec::with_capacity(area);
            let mut new_count = 0;
            for &p in scratch.iter() {
                if new_count == area {
                    break;
                }
                if !mask[p] {
                    new_count += 1;
                }
                kept.push(p);
            }
            *scratch = kept;
        }
    }
}

fn generate_sample(spec: &SyntheticSpec, seed: u64, index: u64) -> Result<BitemporalSample> {
    let size = spec.size;
    let total = size * size;
    let mut rng = rng::indexed_stream(seed, "synthetic", index);

    let car_target = spec.draw_car(&mut rng);
    // A uniform draw is an internal target: snap it to the pixel grid so any
    // drawn value is achievable exactly. Explicit user targets must land
    // within 20% relative or the spec is unsatisfiable.
    let budget = match spec.car_distribution {
        CarDistribution::Uniform { .. } => (car_target * total as f64).round() as usize,
        CarDistribution::Targets(_) => pixel_budget(car_target, total)?,
    };

    let palette = draw_palette(&mut rng);
    let base_a = shaded_image(&palette, size, spec.noise, &mut rng);
    let mut base_b = shaded_image(&palette, size, spec.noise, &mut rng);

    let mut mask = vec![false; total];
    let mut changed = 0usize;
    let mut scratch: Vec<usize> = Vec::new();
    let mut stalls = 0;
    while changed < budget {
        let remaining = budget - changed;
        // Favor one big shape, then fill the tail with smaller ones.
        let area = if remaining > 8 {
            rng.gen_range(remaining / 2..=remaining)
        } else {
            remaining
        };
        let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
        render_shape(kind, size, area, &mut rng, &mask, &mut scratch);
        let new: Vec<usize> = scratch.iter().copied().filter(|&p| !mask[p]).collect();
        let accepted: &[usize] = if new.len() <= remaining {
            &new
        } else {
            &new[..remaining]
        };
        if accepted.is_empty() {
            stalls += 1;
            if stalls > 64 {
                // Deterministic fallback: first unmarked pixels in scan order.
                let fill: Vec<usize> =
                    (0..total).filter(|&p| !mask[p]).take(remaining).collect();
                paint(&mut base_b, &fill, size, &mut rng, spec.noise);
                for &p in &fill {
                    mask[p] = true;
                }
                break;
            }
            continue;
        }
        paint(&mut base_b, accepted, size, &mut rng, spec.noise);
        for &p in accepted {
            mask[p] = true;
        }
        changed += accepted.len();
    }

    let to_f32 = |img: &[f64]| -> Vec<f32> {
        img.iter()
            .map(|&v| f32::from(v.round().clamp(0.0, 255.0) as u8) / 255.0)
            .collect()
    };
    let label = BinaryMask::new(size, size, mask.iter().map(|&m| u8::from(m)).collect())?;
    Ok(BitemporalSample {
        id: format!("{index:06}"),
        image_a: Image::new(size, size, to_f32(&base_a))?,
        image_b: Image::new(size, size, to_f32(&base_b))?,
        label,
    })
}

/// Repaint `pixels` of `img` in a contrasting color.
fn paint(img: &mut [f64], pixels: &[usize], size: usize, rng: &mut ChaCha8Rng, noise: f64) {
    let total = size * size;
    let mut color = [0.0; 3];
    for c in &mut color {
        *c = rng.gen_range(0.0..256.0);
    }
    let amp = noise * 255.0;
    for &p in pixels {
        for c in 0..3 {
            // Offset by half the dynamic range so the change is visible
            // against any background shade.
            let v = (img[c * total + p] + 128.0 + 0.25 * color[c]) % 256.0;
            let jitter = if amp > 0.0 { rng.gen_range(-amp..amp) } else { 0.0 };
            img[c * total + p] = v + jitter;
        }
    }
}

/// Generate `spec.count` samples, deterministically in `(spec, seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let samples: Vec<BitemporalSample> = (0..spec.count)
        .map(|i| generate_sample(spec, seed, i as u64))
        .collect::<Result<_>>()?;
    Dataset::new(SplitTag::Train, samples)
}
