//! Datasets of bitemporal image pairs.
//!
//! On disk a dataset lives under `root/{train,val,test}/{A,B,label}/` with
//! matching file names: `A` holds pre-event images, `B` post-event images
//! (8-bit RGB), `label` the binary change masks (8-bit single channel,
//! any nonzero pixel counts as changed). This mirrors the layout of common
//! change-detection corpora so real data can be dropped in directly.

mod augment;
mod io;
mod synthetic;

pub use augment::{augment, flip_horizontal, flip_vertical, rotate90, AugmentConfig};
pub use io::{load_dataset, save_dataset};
pub use synthetic::{generate_synthetic, CarDistribution, ShapeKind, SyntheticSpec};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::models::BinaryMask;
use crate::numerics::{Scalar, Tensor};
use crate::rng;

/// 3-channel image, planar row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * h * w {
            return Err(Error::shape(
                "Image",
                format!("3x{}x{} wants {} values, got {}", h, w, 3 * h * w, data.len()),
            ));
        }
        Ok(Image { h, w, data })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// View as a `[3, H, W]` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64(f64::from(v))).collect();
        Tensor::from_vec(&[3, self.h, self.w], data).expect("image buffer matches its shape")
    }
}

/// One pre/post image pair with its ground-truth change mask.
#[derive(Debug, Clone)]
pub struct BitemporalSample {
    pub id: String,
    pub image_a: Image,
    pub image_b: Image,
    pub label: BinaryMask,
}

impl BitemporalSample {
    fn validate(&self) -> Result<()> {
        let (h, w) = (self.image_a.height(), self.image_a.width());
        if self.image_b.height() != h
            || self.image_b.width() != w
            || self.label.height() != h
            || self.label.width() != w
        {
            return Err(Error::Dataset(format!(
                "sample '{}' mixes sizes: A {}x{}, B {}x{}, label {}x{}",
                self.id,
                h,
                w,
                self.image_b.height(),
                self.image_b.width(),
                self.label.height(),
                self.label.width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub fn dir_name(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitTag::Train),
            "val" => Ok(SplitTag::Val),
            "test" => Ok(SplitTag::Test),
            other => Err(Error::arg(format!(
                "unknown split '{other}' (expected train, val or test)"
            ))),
        }
    }
}

/// An ordered collection of samples with unique ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: SplitTag,
    samples: Vec<BitemporalSample>,
}

impl Dataset {
    pub fn new(split: SplitTag, samples: Vec<BitemporalSample>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for s in &samples {
            s.validate()?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::Dataset(format!("duplicate sample id '{}'", s.id)));
            }
        }
        Ok(Dataset { split, samples })
    }

    pub fn samples(&self) -> &[BitemporalSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_split(&self, split: SplitTag) -> Dataset {
        Dataset {
            split,
            samples: self.samples.clone(),
        }
    }

    /// Subset by indices, preserving order.
    pub(crate) fn subset(&self, split: SplitTag, idx: &[usize]) -> Dataset {
        Dataset {
            split,
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Deterministically shuffle and partition into train/val/test. Fractions
/// must be nonnegative and sum to 1; sizes are floored per split and any
/// remainder goes to train.
pub fn split_dataset(
    dataset: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 {
        return Err(Error::arg("split fractions must be nonnegative".to_string()));
    }
    if (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!(
            "split fractions must sum to 1, got {} + {} + {} = {}",
            ft,
            fv,
            fs,
            ft + fv + fs
        )));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "split"));

    let n_val = (fv * n as f64).floor() as usize;
    let n_test = (fs * n as f64).floor() as usize;
    let n_train = n - n_val - n_test;

    let train = dataset.subset(SplitTag::Train, &order[..n_train]);
    let val = dataset.subset(SplitTag::Val, &order[n_train..n_train + n_val]);
    let test = dataset.subset(SplitTag::Test, &order[n_train + n_val..]);
    Ok((train, val, test))
}
