//! Two-class evaluation protocol.
//!
//! Change (class 1) and no-change (class 0) are treated symmetrically:
//! every metric is computed for both classes and averaged, e.g.
//! `mIoU = (IoU_0 + IoU_1) / 2` with
//! `IoU_1 = TP / (TP + FP + FN)` and `IoU_0 = TN / (TN + FP + FN)`.
//!
//! Metrics are computed **per image** and then averaged across images with
//! equal weight — never pooled over pixels — so a small image counts as
//! much as a large one.
//!
//! Division convention: a 0/0 quantity is defined as 1. The common case is
//! a class absent from both the ground truth and the prediction (frequent
//! at low CAR), where the prediction is vacuously correct; defining its
//! metrics as 0 would crater the averages on pure-background images.
//! [`ZeroDivisionPolicy::SkipClass`] instead drops absent classes from the
//! per-image class averages.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::BinaryMask;

/// Pixel-level confusion counts for one image; class 1 (changed) is
/// positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Exact pixel counting; masks must have identical shape.
pub fn confusion(gt: &BinaryMask, pred: &BinaryMask) -> Result<ConfusionCounts> {
    if gt.height() != pred.height() || gt.width() != pred.width() {
        return Err(Error::shape(
            "confusion",
            format!(
                "gt {}x{} vs pred {}x{}",
                gt.height(),
                gt.width(),
                pred.height(),
                pred.width()
            ),
        ));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&g, &p) in gt.values().iter().zip(pred.values()) {
        match (g, p) {
            (1, 1) => c.tp += 1,
            (0, 1) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// How to treat 0/0 quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum ZeroDivisionPolicy {
    /// Every 0/0 quantity is 1 (vacuously correct).
    #[default]
    DefineAsOne,
    /// Classes absent from both gt and pred are dropped from the per-image
    /// class averages; remaining 0/0 quantities are still 1.
    SkipClass,
}

/// IoU / precision / recall / F-score for one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub iou: f64,
    pub prec: f64,
    pub rec: f64,
    pub fscore: f64,
}

/// Per-class and class-averaged metrics for one image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    /// Class present in gt or pred (always true for class 0 on any image
    /// with an unchanged pixel, etc.).
    pub present0: bool,
    pub present1: bool,
    pub miou: f64,
    pub mprec: f64,
    pub mrec: f64,
    pub mfscore: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

fn fscore(prec: f64, rec: f64) -> f64 {
    if prec + rec == 0.0 {
        1.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

/// Metrics of one image from its confusion counts.
pub fn image_metrics(counts: ConfusionCounts, policy: ZeroDivisionPolicy) -> ImageMetrics {
    let ConfusionCounts { tp, fp, tn, fn_ } = counts;
    let class1 = ClassMetrics {
        iou: ratio(tp, tp + fp + fn_),
        prec: ratio(tp, tp + fp),
        rec: ratio(tp, tp + fn_),
        fscore: fscore(ratio(tp, tp + fp), ratio(tp, tp + fn_)),
    };
    let class0 = ClassMetrics {
        iou: ratio(tn, tn + fp + fn_),
        prec: ratio(tn, tn + fn_),
        rec: ratio(tn, tn + fp),
        fscore: fscore(ratio(tn, tn + fn_), ratio(tn, tn + fp)),
    };
    let present1 = tp + fp + fn_ > 0;
    let present0 = tn + fp + fn_ > 0;

    let average = |c0: f64, c1: f64| -> f64 {
        match policy {
            ZeroDivisionPolicy::DefineAsOne => (c0 + c1) / 2.0,
            ZeroDivisionPolicy::SkipClass => match (present0, present1) {
                (true, true) => (c0 + c1) / 2.0,
                (true, false) => c0,
                (false, true) => c1,
                // Unreachable on nonempty images, but total absence means
                // vacuous correctness either way.
                (false, false) => 1.0,
            },
        }
    };

    ImageMetrics {
        class0,
        class1,
        present0,
        present1,
        miou: average(class0.iou, class1.iou),
        mprec: average(class0.prec, class1.prec),
        mrec: average(class0.rec, class1.rec),
        mfscore: average(class0.fscore, class1.fscore),
    }
}

/// One evaluated image: identifier, ground-truth CAR, metrics.
#[derive(Debug, Clone, Serialize)]
pub struct PerImageRow {
    pub id: String,
    pub car: f64,
    #[serde(flatten)]
    pub metrics: ImageMetrics,
}

/// Unweighted means of the per-image values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub miou: f64,
    pub mprec: f64,
    pub mrec: f64,
    pub mfscore: f64,
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
}

/// Per-image rows plus their aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<PerImageRow>,
    pub aggregate: AggregateMetrics,
    pub policy: ZeroDivisionPolicy,
}

/// Evaluate a set of (id, ground truth, prediction) triples: per-image
/// metrics first, then the unweighted arithmetic mean across images.
pub fn dataset_metrics(
    rows: &[(String, &BinaryMask, &BinaryMask)],
    policy: ZeroDivisionPolicy,
) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::arg("dataset_metrics needs at least one image".to_string()));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (id, gt, pred) in rows {
        let counts = confusion(gt, pred)?;
        let metrics = image_metrics(counts, policy);
        let car = crate::car::compute_car(gt)?.ratio();
        out.push(PerImageRow {
            id: id.clone(),
            car,
            metrics,
        });
    }

    let n = out.len() as f64;
    let mean = |f: &dyn Fn(&ImageMetrics) -> f64| out.iter().map(|r| f(&r.metrics)).sum::<f64>() / n;
    let mean_class = |pick: &dyn Fn(&ImageMetrics) -> ClassMetrics| ClassMetrics {
        iou: mean(&|m| pick(m).iou),
        prec: mean(&|m| pick(m).prec),
        rec: mean(&|m| pick(m).rec),
        fscore: mean(&|m| pick(m).fscore),
    };
    let aggregate = AggregateMetrics {
        miou: mean(&|m| m.miou),
        mprec: mean(&|m| m.mprec),
        mrec: mean(&|m| m.mrec),
        mfscore: mean(&|m| m.mfscore),
        class0: mean_class(&|m| m.class0),
        class1: mean_class(&|m| m.class1),
    };
    Ok(MetricsReport {
        rows: out,
        aggregate,
        policy,
    })
}

/// One band of the CAR-sorted partition table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionBand {
    pub car_lo: f64,
    pub car_hi: f64,
    pub count: usize,
    pub mean_miou: f64,
}

/// Sort images by ground-truth CAR (ties by id) and split them into `k`
/// contiguous near-equal groups — sizes differ by at most one, larger
/// groups first. Each band reports its CAR bounds and mean per-image mIoU.
pub fn partition_report(report: &MetricsReport, k: usize) -> Result<Vec<PartitionBand>> {
    if k == 0 {
        return Err(Error::arg("partition report needs k >= 1".to_string()));
    }
    let n = report.rows.len();
    if n < k {
        return Err(Error::arg(format!(
            "partition report needs at least k = {k} images, got {n}"
        )));
    }
    let mut order: Vec<&PerImageRow> = report.rows.iter().collect();
    order.sort_by(|a, b| {
        a.car
            .partial_cmp(&b.car)
            .expect("CARs are finite")
            .then_with(|| a.id.cmp(&b.id))
    });

    let base = n / k;
    let extra = n % k;
    let mut bands = Vec::with_capacity(k);
    let mut start = 0usize;
    for g in 0..k {
        let size = base + usize::from(g < extra);
        let group = &order[start..start + size];
        start += size;
        bands.push(PartitionBand {
            car_lo: group.first().expect("groups are nonempty").car,
            car_hi: group.last().expect("groups are nonempty").car,
            count: size,
            mean_miou: group.iter().map(|r| r.metrics.miou).sum::<f64>() / size as f64,
        });
    }
    Ok(bands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mask(values: &[u8], h: usize, w: usize) -> BinaryMask {
        BinaryMask::new(h, w, values.to_vec()).unwrap()
    }

    #[test]
    fn all_background_is_all_true_negative() {
        let z = BinaryMask::zeros(3, 4);
        let c = confusion(&z, &z).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (0, 0, 12, 0));
        assert_eq!(c.total(), 12);
    }

    #[test]
    fn hand_counted_confusion() {
        let gt = mask(&[1, 0, 0, 0], 2, 2);
        let pred = mask(&[1, 1, 0, 0], 2, 2);
        let c = confusion(&gt, &pred).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 2, 0));
    }

    #[test]
    fn swapping_gt_and_pred_swaps_fp_fn() {
        let mut rng = crate::rng::stream(1, "metrics-test");
        for _ in 0..100 {
            let a: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let b: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let (ma, mb) = (mask(&a, 4, 4), mask(&b, 4, 4));
            let ab = confusion(&ma, &mb).unwrap();
            let ba = confusion(&mb, &ma).unwrap();
            assert_eq!((ab.tp, ab.tn), (ba.tp, ba.tn));
            assert_eq!(ab.fp, ba.fn_);
            assert_eq!(ab.fn_, ba.fp);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = BinaryMask::zeros(2, 2);
        let b = BinaryMask::zeros(2, 3);
        assert!(confusion(&a, &b).is_err());
    }

    #[test]
    fn worked_example_row() {
        // TP=1, FP=1, TN=2, FN=0 substituted directly into the formulas.
        let m = image_metrics(
            ConfusionCounts { tp: 1, fp: 1, tn: 2, fn_: 0 },
            ZeroDivisionPolicy::DefineAsOne,
        );
        assert!((m.class1.iou - 0.5).abs() < 1e-12);
        assert!((m.class0.iou - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.miou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((m.mprec - 0.75).abs() < 1e-12);
        assert!((m.mrec - (2.0 / 3.0 + 1.0) / 2.0).abs() < 1e-12);
        // F1(class1) = 2*0.5*1/1.5 = 2/3, F1(class0) = 2*1*(2/3)/(5/3) = 0.8
        assert!((m.mfscore - (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_scores_one_everywhere() {
        let gt = mask(&[1, 0, 1, 0, 1, 1, 0, 0], 2, 4);
        let m = image_metrics(confusion(&gt, &gt).unwrap(), ZeroDivisionPolicy::DefineAsOne);
        for v in [
            m.miou, m.mprec, m.mrec, m.mfscore, m.class0.iou, m.class1.iou, m.class0.fscore,
            m.class1.fscore,
        ] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn absent_class_defaults_to_one() {
        // gt and pred all background: class-1 quantities are all 0/0.
        let z = BinaryMask::zeros(4, 4);
        let m = image_metrics(confusion(&z, &z).unwrap(), ZeroDivisionPolicy::DefineAsOne);
        assert_eq!(m.class1.iou, 1.0);
        assert_eq!(m.class1.prec, 1.0);
        assert_eq!(m.class1.rec, 1.0);
        assert_eq!(m.class1.fscore, 1.0);
        assert_eq!(m.miou, 1.0);
        assert!(!m.present1);
    }

    #[test]
    fn skip_class_policy_drops_absent_class() {
        let gt = mask(&[0, 0, 0, 1], 2, 2);
        let pred = mask(&[0, 0, 0, 0], 2, 2);
        // class1 present (in gt): kept under both policies.
        let m = image_metrics(confusion(&gt, &pred).unwrap(), ZeroDivisionPolicy::SkipClass);
        assert!(m.present1);
        assert!((m.miou - (0.75 + 0.0) / 2.0).abs() < 1e-12);

        let z = BinaryMask::zeros(2, 2);
        let m = image_metrics(confusion(&z, &z).unwrap(), ZeroDivisionPolicy::SkipClass);
        assert!(!m.present1);
        assert_eq!(m.miou, 1.0); // class 0 alone, which is perfect
    }

    #[test]
    fn complement_swaps_classes_and_fixes_means() {
        let mut rng = crate::rng::stream(2, "metrics-test");
        for _ in 0..100 {
            let a: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let b: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let flip = |v: &[u8]| v.iter().map(|x| 1 - x).collect::<Vec<_>>();
            let m = image_metrics(
                confusion(&mask(&a, 4, 4), &mask(&b, 4, 4)).unwrap(),
                ZeroDivisionPolicy::DefineAsOne,
            );
            let mc = image_metrics(
                confusion(&mask(&flip(&a), 4, 4), &mask(&flip(&b), 4, 4)).unwrap(),
                ZeroDivisionPolicy::DefineAsOne,
            );
            assert_eq!(m.class0, mc.class1);
            assert_eq!(m.class1, mc.class0);
            assert_eq!(m.miou, mc.miou);
            assert_eq!(m.mfscore, mc.mfscore);
        }
    }

    #[test]
    fn precision_recall_transpose() {
        let mut rng = crate::rng::stream(3, "metrics-test");
        for _ in 0..100 {
            let a: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let b: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
            let ab = image_metrics(
                confusion(&mask(&a, 4, 4), &mask(&b, 4, 4)).unwrap(),
                ZeroDivisionPolicy::DefineAsOne,
            );
            let ba = image_metrics(
                confusion(&mask(&b, 4, 4), &mask(&a, 4, 4)).unwrap(),
                ZeroDivisionPolicy::DefineAsOne,
            );
            assert_eq!(ab.class1.prec, ba.class1.rec);
            assert_eq!(ab.class1.rec, ba.class1.prec);
        }
    }

    #[test]
    fn per_image_averaging_ignores_image_size() {
        // A perfect 2x2 image and a half-right 4x4 image average to 0.75
        // regardless of their differing pixel counts.
        let small_gt = mask(&[1, 0, 0, 1], 2, 2);
        let big_gt = mask(&[1; 16], 4, 4);
        let big_pred = mask(
            &[1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0],
            4,
            4,
        );
        // Big image: TP=8, FN=8, FP=0, TN=0, so IoU_1 = 8/16 = 0.5 and
        // IoU_0 = 0/8 = 0, giving mIoU = 0.25. Small image is perfect.
        // Per-image averaging: (1.0 + 0.25) / 2, not a pixel-pooled value.
        let rows = vec![
            ("small".to_string(), &small_gt, &small_gt),
            ("big".to_string(), &big_gt, &big_pred),
        ];
        let report = dataset_metrics(&rows, ZeroDivisionPolicy::DefineAsOne).unwrap();
        assert!((report.aggregate.miou - (1.0 + 0.25) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_is_mean_of_rows_and_reorder_invariant() {
        let mut rng = crate::rng::stream(4, "metrics-test");
        let masks: Vec<(String, BinaryMask, BinaryMask)> = (0..7)
            .map(|i| {
                let a: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
                let b: Vec<u8> = (0..16).map(|_| rng.gen_range(0..=1)).collect();
                (format!("img{i}"), mask(&a, 4, 4), mask(&b, 4, 4))
            })
            .collect();
        let rows: Vec<(String, &BinaryMask, &BinaryMask)> = masks
            .iter()
            .map(|(id, g, p)| (id.clone(), g, p))
            .collect();
        let fwd = dataset_metrics(&rows, ZeroDivisionPolicy::DefineAsOne).unwrap();
        let mut rev_rows = rows.clone();
        rev_rows.reverse();
        let rev = dataset_metrics(&rev_rows, ZeroDivisionPolicy::DefineAsOne).unwrap();
        assert!((fwd.aggregate.miou - rev.aggregate.miou).abs() < 1e-12);
        assert!((fwd.aggregate.mfscore - rev.aggregate.mfscore).abs() < 1e-12);

        // Duplicating every row leaves the mean unchanged.
        let mut doubled = rows.clone();
        doubled.extend(rows.iter().cloned());
        let dup = dataset_metrics(&doubled, ZeroDivisionPolicy::DefineAsOne).unwrap();
        assert!((fwd.aggregate.miou - dup.aggregate.miou).abs() < 1e-12);
    }

    #[test]
    fn single_image_aggregate_is_that_image() {
        let gt = mask(&[1, 0, 0, 0], 2, 2);
        let pred = mask(&[1, 1, 0, 0], 2, 2);
        let rows = vec![("only".to_string(), &gt, &pred)];
        let report = dataset_metrics(&rows, ZeroDivisionPolicy::DefineAsOne).unwrap();
        assert_eq!(report.aggregate.miou, report.rows[0].metrics.miou);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(dataset_metrics(&[], ZeroDivisionPolicy::DefineAsOne).is_err());
    }

    fn fake_report(cars_mious: &[(f64, f64)]) -> MetricsReport {
        // Build a report with chosen car/miou pairs via synthetic rows.
        let rows = cars_mious
            .iter()
            .enumerate()
            .map(|(i, &(car, miou))| PerImageRow {
                id: format!("r{i:02}"),
                car,
                metrics: ImageMetrics {
                    class0: ClassMetrics { iou: miou, prec: 1.0, rec: 1.0, fscore: 1.0 },
                    class1: ClassMetrics { iou: miou, prec: 1.0, rec: 1.0, fscore: 1.0 },
                    present0: true,
                    present1: true,
                    miou,
                    mprec: 1.0,
                    mrec: 1.0,
                    mfscore: 1.0,
                },
            })
            .collect::<Vec<_>>();
        let n = rows.len() as f64;
        let agg_miou = rows.iter().map(|r| r.metrics.miou).sum::<f64>() / n;
        MetricsReport {
            rows,
            aggregate: AggregateMetrics {
                miou: agg_miou,
                mprec: 1.0,
                mrec: 1.0,
                mfscore: 1.0,
                class0: ClassMetrics { iou: 1.0, prec: 1.0, rec: 1.0, fscore: 1.0 },
                class1: ClassMetrics { iou: 1.0, prec: 1.0, rec: 1.0, fscore: 1.0 },
            },
            policy: ZeroDivisionPolicy::DefineAsOne,
        }
    }

    #[test]
    fn single_band_equals_aggregate() {
        let report = fake_report(&[(0.1, 0.5), (0.3, 0.7), (0.2, 0.9)]);
        let bands = partition_report(&report, 1).unwrap();
        assert_eq!(bands.len(), 1);
        assert!((bands[0].mean_miou - report.aggregate.miou).abs() < 1e-12);
        assert_eq!(bands[0].count, 3);
    }

    #[test]
    fn five_bands_of_ten_rows_are_equal_sized() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 10.0, 0.5)).collect();
        let bands = partition_report(&fake_report(&pairs), 5).unwrap();
        assert_eq!(bands.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2; 5]);
    }

    #[test]
    fn hand_computed_band_means() {
        // Sorted by car: (0.0,0.2) (0.1,0.4) | (0.2,0.6) (0.3,0.8) | (0.9,1.0)
        let report = fake_report(&[
            (0.9, 1.0),
            (0.0, 0.2),
            (0.2, 0.6),
            (0.1, 0.4),
            (0.3, 0.8),
        ]);
        let bands = partition_report(&report, 3).unwrap();
        assert_eq!(bands.iter().map(|b| b.count).collect::<Vec<_>>(), vec![2, 2, 1]);
        assert!((bands[0].mean_miou - 0.3).abs() < 1e-12);
        assert!((bands[1].mean_miou - 0.7).abs() < 1e-12);
        assert!((bands[2].mean_miou - 1.0).abs() < 1e-12);
        assert_eq!((bands[0].car_lo, bands[0].car_hi), (0.0, 0.1));
        assert_eq!((bands[2].car_lo, bands[2].car_hi), (0.9, 0.9));
    }

    #[test]
    fn too_few_rows_rejected() {
        let report = fake_report(&[(0.1, 0.5), (0.2, 0.5)]);
        assert!(partition_report(&report, 3).is_err());
    }
}
