//! Change Area Ratio: computation, threshold partitioning, distribution
//! analytics.
//!
//! The CAR of a mask is the fraction of changed pixels over the image area.
//! A [`PartitionSpec`] carves `[0, 1]` into labeled bands with closed-right
//! boundaries: a CAR exactly equal to a threshold belongs to the partition
//! below it.

use std::collections::BTreeMap;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::BinaryMask;

/// A change-area ratio in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct CarValue(f64);

impl CarValue {
    pub fn new(ratio: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(Error::arg(format!("CAR {ratio} outside [0, 1]")));
        }
        Ok(CarValue(ratio))
    }

    pub fn ratio(&self) -> f64 {
        self.0
    }
}

/// Ordered CAR thresholds and the partition labels between them
/// (`labels.len() == thresholds.len() + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSpec {
    thresholds: Vec<f64>,
    labels: Vec<String>,
}

impl PartitionSpec {
    pub fn new(thresholds: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != thresholds.len() + 1 {
            return Err(Error::arg(format!(
                "partition spec needs {} labels for {} thresholds, got {}",
                thresholds.len() + 1,
                thresholds.len(),
                labels.len()
            )));
        }
        for t in &thresholds {
            if !(0.0 < *t && *t < 1.0) {
                return Err(Error::arg(format!("threshold {t} must lie strictly in (0, 1)")));
            }
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::arg(format!(
                "thresholds must be strictly increasing, got {thresholds:?}"
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::arg(format!("duplicate partition label '{l}'")));
            }
        }
        Ok(PartitionSpec { thresholds, labels })
    }

    /// Default three-way small/medium/large split at 0.05 and 0.2.
    pub fn three_way() -> Self {
        PartitionSpec::new(
            vec![0.05, 0.2],
            vec!["small".into(), "medium".into(), "large".into()],
        )
        .expect("static spec is valid")
    }

    /// Default two-teacher small/large split at 0.10.
    pub fn two_way() -> Self {
        PartitionSpec::new(vec![0.10], vec!["small".into(), "large".into()])
            .expect("static spec is valid")
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

/// Fraction of changed pixels over the image area.
pub fn compute_car(mask: &BinaryMask) -> Result<CarValue> {
    let total = mask.height() * mask.width();
    if total == 0 {
        return Err(Error::arg("CAR of an empty mask is undefined".to_string()));
    }
    CarValue::new(mask.count_ones() as f64 / total as f64)
}

/// Index of the partition holding `car`: the first band whose upper
/// threshold is >= car (closed-right intervals).
pub fn partition_index(car: CarValue, spec: &PartitionSpec) -> usize {
    for (i, t) in spec.thresholds.iter().enumerate() {
        if car.ratio() <= *t {
            return i;
        }
    }
    spec.thresholds.len()
}

/// Label of the partition holding `car`.
pub fn partition_of<'s>(car: CarValue, spec: &'s PartitionSpec) -> &'s str {
    &spec.labels[partition_index(car, spec)]
}

/// Partition a dataset by the CAR of each sample's ground-truth label.
/// Subsets are disjoint, keep input order, and their union is the input;
/// every label appears in the map even when its subset is empty.
pub fn partition_dataset(
    dataset: &Dataset,
    spec: &PartitionSpec,
) -> Result<BTreeMap<String, Dataset>> {
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); spec.len()];
    for (i, sample) in dataset.samples().iter().enumerate() {
        let car = compute_car(&sample.label)?;
        buckets[partition_index(car, spec)].push(i);
    }
    let mut out = BTreeMap::new();
    for (label, bucket) in spec.labels.iter().zip(buckets) {
        out.insert(label.clone(), dataset.subset(dataset.split, &bucket));
    }
    Ok(out)
}

/// Equal-width histogram of ground-truth CARs over `[0, 1]`. The last bin
/// includes its right edge, so a CAR of exactly 1 lands in the final bin.
pub fn car_histogram(dataset: &Dataset, bin_count: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    if bin_count == 0 {
        return Err(Error::arg("histogram needs at least one bin".to_string()));
    }
    let mut counts = vec![0usize; bin_count];
    for sample in dataset.samples() {
        let car = compute_car(&sample.label)?.ratio();
        let bin = ((car * bin_count as f64).floor() as usize).min(bin_count - 1);
        counts[bin] += 1;
    }
    let edges = (0..=bin_count)
        .map(|i| i as f64 / bin_count as f64)
        .collect();
    Ok((edges, counts))
}
