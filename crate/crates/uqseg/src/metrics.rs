//! Challenge metrics: confusion-matrix IoU, calibration error, and the
//! threshold-free OOD detection scores (AUROC, AUPR, FPR at 95% TPR).
//!
//! Pixels whose ground truth is the ignore id or one of the OOD ids never
//! enter the confusion matrix or the calibration bins; OOD pixels instead
//! form the positive class of the detection metrics, scored by `1 -
//! confidence`. Metrics that are undefined on the given data (no positives,
//! no evaluated pixels, ...) are reported as `None`, never as zero.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{check_same_grid, ClassMap, ConfidenceMap, IGNORE_ID};

/// Bin count used for calibration error unless a caller overrides it.
pub const DEFAULT_ECE_BINS: usize = 15;

/// The OOD-positive score of a confidence value.
#[inline]
pub fn ood_score(confidence: f32) -> f64 {
    1.0 - confidence as f64
}

/// Square matrix of (ground truth, prediction) pixel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::invalid("confusion matrix needs at least one class"));
        }
        Ok(ConfusionMatrix { num_classes, counts: vec![0; num_classes * num_classes] })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.num_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds a single (ground truth, prediction) pair.
    pub fn accumulate_pixel(&mut self, gt: u8, pred: u8) -> Result<()> {
        if gt as usize >= self.num_classes {
            return Err(Error::invalid(format!(
                "ground truth id {gt} out of range for {} classes",
                self.num_classes
            )));
        }
        if pred == IGNORE_ID || pred as usize >= self.num_classes {
            return Err(Error::invalid(format!(
                "prediction id {pred} out of range for {} classes",
                self.num_classes
            )));
        }
        self.counts[gt as usize * self.num_classes + pred as usize] += 1;
        Ok(())
    }

    /// Adds every pixel of the pair whose ground truth is neither ignored
    /// nor in `ood_ids`.
    pub fn accumulate(
        &mut self,
        gt: &ClassMap,
        pred: &ClassMap,
        ood_ids: &BTreeSet<u8>,
    ) -> Result<()> {
        check_same_grid(
            (gt.height(), gt.width()),
            (pred.height(), pred.width()),
            "ground truth vs prediction",
        )?;
        for (&g, &p) in gt.data().iter().zip(pred.data()) {
            if g == IGNORE_ID || ood_ids.contains(&g) {
                continue;
            }
            self.accumulate_pixel(g, p)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.num_classes != other.num_classes {
            return Err(Error::shape(format!(
                "confusion matrices of {} vs {} classes",
                self.num_classes, other.num_classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Intersection over union of class `c`; `None` when the class has no
    /// ground-truth or predicted pixels.
    pub fn class_iou(&self, c: usize) -> Option<f64> {
        let n = self.num_classes;
        let tp = self.counts[c * n + c];
        let fp: u64 = (0..n).filter(|&g| g != c).map(|g| self.counts[g * n + c]).sum();
        let fn_: u64 = (0..n).filter(|&p| p != c).map(|p| self.counts[c * n + p]).sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            None
        } else {
            Some(tp as f64 / denom as f64)
        }
    }

    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes).map(|c| self.class_iou(c)).collect()
    }

    /// Mean IoU over the classes whose IoU is defined.
    pub fn miou(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        if defined.is_empty() {
            None
        } else {
            Some(defined.iter().sum::<f64>() / defined.len() as f64)
        }
    }
}

pub fn confusion_matrix(
    gt: &ClassMap,
    pred: &ClassMap,
    ood_ids: &BTreeSet<u8>,
    num_classes: usize,
) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::zeros(num_classes)?;
    cm.accumulate(gt, pred, ood_ids)?;
    Ok(cm)
}

/// Equal-width confidence bins over `[0, 1]`; every bin is half-open except
/// the last, which includes 1.0. Accumulates counts, confidence sums, and
/// correctness so that partial results can be merged exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedCalibration {
    counts: Vec<u64>,
    conf_sums: Vec<f64>,
    correct: Vec<u64>,
}

impl BinnedCalibration {
    pub fn zeros(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::invalid("calibration needs at least one bin"));
        }
        Ok(BinnedCalibration {
            counts: vec![0; num_bins],
            conf_sums: vec![0.0; num_bins],
            correct: vec![0; num_bins],
        })
    }

    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn bin_index(&self, confidence: f64) -> usize {
        let nb = self.counts.len();
        ((confidence * nb as f64) as usize).min(nb - 1)
    }

    pub fn observe(&mut self, confidence: f64, correct: bool) {
        let k = self.bin_index(confidence);
        self.counts[k] += 1;
        self.conf_sums[k] += confidence;
        if correct {
            self.correct[k] += 1;
        }
    }

    /// Bins every pixel whose ground truth is a real class (not ignored,
    /// not OOD), marking it correct when the prediction matches.
    pub fn accumulate(
        &mut self,
        conf: &ConfidenceMap,
        pred: &ClassMap,
        gt: &ClassMap,
        ood_ids: &BTreeSet<u8>,
    ) -> Result<()> {
        check_same_grid(
            (conf.height(), conf.width()),
            (gt.height(), gt.width()),
            "confidence vs ground truth",
        )?;
        check_same_grid(
            (pred.height(), pred.width()),
            (gt.height(), gt.width()),
            "prediction vs ground truth",
        )?;
        for ((&c, &p), &g) in conf.data().iter().zip(pred.data()).zip(gt.data()) {
            if g == IGNORE_ID || ood_ids.contains(&g) {
                continue;
            }
            self.observe(c as f64, p == g);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BinnedCalibration) -> Result<()> {
        if self.num_bins() != other.num_bins() {
            return Err(Error::shape(format!(
                "calibration with {} vs {} bins",
                self.num_bins(),
                other.num_bins()
            )));
        }
        for k in 0..self.counts.len() {
            self.counts[k] += other.counts[k];
            self.conf_sums[k] += other.conf_sums[k];
            self.correct[k] += other.correct[k];
        }
        Ok(())
    }

    pub fn count(&self, k: usize) -> u64 {
        self.counts[k]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean_confidence(&self, k: usize) -> Option<f64> {
        if self.counts[k] == 0 {
            None
        } else {
            Some(self.conf_sums[k] / self.counts[k] as f64)
        }
    }

    pub fn mean_accuracy(&self, k: usize) -> Option<f64> {
        if self.counts[k] == 0 {
            None
        } else {
            Some(self.correct[k] as f64 / self.counts[k] as f64)
        }
    }

    /// Expected calibration error: the count-weighted mean of
    /// `|accuracy - confidence|` over non-empty bins. `None` with no data.
    pub fn ece(&self) -> Option<f64> {
        let total = self.total();
        if total == 0 {
            return None;
        }
        let mut sum = 0.0;
        for k in 0..self.counts.len() {
            if self.counts[k] == 0 {
                continue;
            }
            let acc = self.correct[k] as f64 / self.counts[k] as f64;
            let conf = self.conf_sums[k] / self.counts[k] as f64;
            sum += (self.counts[k] as f64 / total as f64) * (acc - conf).abs();
        }
        Some(sum)
    }
}

pub fn ece(
    conf: &ConfidenceMap,
    pred: &ClassMap,
    gt: &ClassMap,
    ood_ids: &BTreeSet<u8>,
    num_bins: usize,
) -> Result<Option<f64>> {
    let mut bins = BinnedCalibration::zeros(num_bins)?;
    bins.accumulate(conf, pred, gt, ood_ids)?;
    Ok(bins.ece())
}

fn check_finite_scores(samples: &[(f64, bool)]) -> Result<()> {
    if samples.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::invalid("detection scores must be finite"));
    }
    Ok(())
}

/// Sample indices sorted ascending by score (stable for equal scores).
fn ascending_order(samples: &[(f64, bool)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].0.partial_cmp(&samples[b].0).unwrap());
    order
}

/// Area under the ROC curve via the rank-sum formulation; ties receive
/// their average rank. `None` unless both classes are present.
pub fn auroc(samples: &[(f64, bool)]) -> Result<Option<f64>> {
    check_finite_scores(samples)?;
    let n_pos = samples.iter().filter(|(_, p)| *p).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let order = ascending_order(samples);
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && samples[order[j]].0 == samples[order[i]].0 {
            j += 1;
        }
        // 1-based ranks i+1 ..= j averaged over the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if samples[idx].1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    Ok(Some((rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn)))
}

/// Average precision: the precision/recall curve is traced over descending
/// distinct score thresholds and summed as `sum((R_i - R_{i-1}) * P_i)`
/// without interpolation. `None` when there are no positives.
pub fn aupr(samples: &[(f64, bool)]) -> Result<Option<f64>> {
    check_finite_scores(samples)?;
    let n_pos = samples.iter().filter(|(_, p)| *p).count();
    if n_pos == 0 {
        return Ok(None);
    }
    let mut order = ascending_order(samples);
    order.reverse();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut ap = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut group_pos = 0u64;
        while j < order.len() && samples[order[j]].0 == samples[order[i]].0 {
            if samples[order[j]].1 {
                group_pos += 1;
            }
            j += 1;
        }
        let group_neg = (j - i) as u64 - group_pos;
        tp += group_pos;
        fp += group_neg;
        if group_pos > 0 {
            let precision = tp as f64 / (tp + fp) as f64;
            let recall_delta = group_pos as f64 / n_pos as f64;
            ap += precision * recall_delta;
        }
        i = j;
    }
    Ok(Some(ap))
}

/// False positive rate at the largest score threshold whose true positive
/// rate reaches 0.95, where a sample is flagged when `score >= threshold`.
/// `None` unless both classes are present.
pub fn fpr_at_95_tpr(samples: &[(f64, bool)]) -> Result<Option<f64>> {
    const TPR_TARGET: f64 = 0.95;
    check_finite_scores(samples)?;
    let n_pos = samples.iter().filter(|(_, p)| *p).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok(None);
    }
    let mut order = ascending_order(samples);
    order.reverse();
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && samples[order[j]].0 == samples[order[i]].0 {
            if samples[order[j]].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        if tp as f64 / n_pos as f64 >= TPR_TARGET {
            return Ok(Some(fp as f64 / n_neg as f64));
        }
        i = j;
    }
    // The smallest threshold flags everything, so TPR = 1 is always reached.
    unreachable!("TPR must reach 1.0 at the smallest threshold");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::BinaryMask;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, nc: usize, data: Vec<u8>) -> ClassMap {
        ClassMap::new(h, w, nc, data).unwrap()
    }

    fn no_ood() -> BTreeSet<u8> {
        BTreeSet::new()
    }

    #[test]
    fn confusion_matrix_counts_and_miou() {
        // gt 0 0 1 1 1, pred 0 1 1 1 1, one ignored pixel.
        let gt = map(1, 6, 2, vec![0, 0, 1, 1, 1, IGNORE_ID]);
        let pred = map(1, 6, 2, vec![0, 1, 1, 1, 1, 0]);
        let cm = confusion_matrix(&gt, &pred, &no_ood(), 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.count(1, 1), 3);
        // IoU(0) = 1/2, IoU(1) = 3/4, mIoU = 5/8.
        assert_eq!(cm.class_iou(0), Some(0.5));
        assert_eq!(cm.class_iou(1), Some(0.75));
        assert_eq!(cm.miou(), Some(0.625));
    }

    #[test]
    fn miou_skips_unsupported_classes() {
        let gt = map(1, 4, 3, vec![0, 0, 1, 1]);
        let pred = map(1, 4, 3, vec![0, 0, 1, 0]);
        let cm = confusion_matrix(&gt, &pred, &no_ood(), 3).unwrap();
        assert_eq!(cm.class_iou(2), None);
        // IoU(0) = 2/3, IoU(1) = 1/2.
        let miou = cm.miou().unwrap();
        assert!((miou - (2.0 / 3.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn all_ignored_gives_undefined_miou() {
        let gt = map(1, 2, 2, vec![IGNORE_ID, IGNORE_ID]);
        let pred = map(1, 2, 2, vec![0, 1]);
        let cm = confusion_matrix(&gt, &pred, &no_ood(), 2).unwrap();
        assert_eq!(cm.miou(), None);
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn ood_pixels_leave_the_matrix() {
        let gt = map(1, 3, 2, vec![0, 1, 1]);
        let pred = map(1, 3, 2, vec![0, 1, 0]);
        let ood: BTreeSet<u8> = [1u8].into_iter().collect();
        let cm = confusion_matrix(&gt, &pred, &ood, 2).unwrap();
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.count(0, 0), 1);
    }

    #[test]
    fn merge_matches_joint_accumulation() {
        let gt_a = map(1, 3, 2, vec![0, 1, 1]);
        let pred_a = map(1, 3, 2, vec![0, 1, 0]);
        let gt_b = map(1, 2, 2, vec![1, 0]);
        let pred_b = map(1, 2, 2, vec![1, 1]);
        let mut merged = confusion_matrix(&gt_a, &pred_a, &no_ood(), 2).unwrap();
        merged
            .merge(&confusion_matrix(&gt_b, &pred_b, &no_ood(), 2).unwrap())
            .unwrap();
        let mut joint = ConfusionMatrix::zeros(2).unwrap();
        joint.accumulate(&gt_a, &pred_a, &no_ood()).unwrap();
        joint.accumulate(&gt_b, &pred_b, &no_ood()).unwrap();
        assert_eq!(merged, joint);
    }

    #[test]
    fn ece_two_bin_example() {
        // Two bins; pixels (conf 0.3 wrong), (conf 0.9 right), (conf 0.7 wrong),
        // (conf 0.8 right). Bin 0: conf 0.3, acc 0 -> |0 - 0.3| = 0.3 weight 1/4.
        // Bin 1: mean conf 0.8, acc 2/3 -> |2/3 - 0.8| = 2/15 weight 3/4.
        let raw = [0.3f32, 0.9, 0.7, 0.8];
        let conf = ConfidenceMap::new(1, 4, raw.to_vec()).unwrap();
        let pred = map(1, 4, 2, vec![0, 1, 0, 1]);
        let gt = map(1, 4, 2, vec![1, 1, 1, 1]);
        let e = ece(&conf, &pred, &gt, &no_ood(), 2).unwrap().unwrap();
        let c: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let expected = 0.25 * c[0] + 0.75 * ((c[1] + c[2] + c[3]) / 3.0 - 2.0 / 3.0);
        assert!((e - expected).abs() < 1e-12);
    }

    #[test]
    fn ece_undefined_without_pixels() {
        let conf = ConfidenceMap::new(1, 1, vec![0.5]).unwrap();
        let pred = map(1, 1, 2, vec![0]);
        let gt = map(1, 1, 2, vec![IGNORE_ID]);
        assert_eq!(ece(&conf, &pred, &gt, &no_ood(), 15).unwrap(), None);
    }

    #[test]
    fn bin_index_edges() {
        let bins = BinnedCalibration::zeros(15).unwrap();
        assert_eq!(bins.bin_index(0.0), 0);
        assert_eq!(bins.bin_index(1.0), 14);
        assert_eq!(bins.bin_index(1.0 / 15.0), 1);
        let two = BinnedCalibration::zeros(2).unwrap();
        assert_eq!(two.bin_index(0.5), 1);
    }

    #[test]
    fn auroc_frozen_example() {
        let samples = [(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        assert_eq!(auroc(&samples).unwrap(), Some(0.75));
    }

    #[test]
    fn auroc_with_ties_averages_ranks() {
        // Positive and negative share the score 0.5: AUC = 0.5.
        let samples = [(0.5, true), (0.5, false)];
        assert_eq!(auroc(&samples).unwrap(), Some(0.5));
    }

    #[test]
    fn auroc_single_class_undefined() {
        assert_eq!(auroc(&[(0.5, true), (0.1, true)]).unwrap(), None);
        assert_eq!(auroc(&[(0.5, false)]).unwrap(), None);
        assert_eq!(auroc(&[]).unwrap(), None);
    }

    #[test]
    fn aupr_frozen_examples() {
        // Perfect ranking.
        let perfect = [(0.9, true), (0.8, true), (0.2, false), (0.1, false)];
        assert_eq!(aupr(&perfect).unwrap(), Some(1.0));
        // Mixed ranking from the AUROC example: AP = 1/2 * 1 + 1/2 * 2/3 = 5/6.
        let mixed = [(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        let ap = aupr(&mixed).unwrap().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
        // Worst ranking of one positive among two: AP = 1/3... precision at
        // the positive's threshold counts all higher negatives.
        let worst = [(0.9, false), (0.8, false), (0.7, true)];
        assert_eq!(aupr(&worst).unwrap(), Some(1.0 / 3.0));
    }

    #[test]
    fn aupr_tied_scores_use_one_threshold() {
        // All samples share a score: a single threshold yields precision =
        // prevalence and recall 1.
        let tied = [(0.5, true), (0.5, false), (0.5, false), (0.5, true)];
        assert_eq!(aupr(&tied).unwrap(), Some(0.5));
    }

    #[test]
    fn fpr_frozen_example() {
        // Descending thresholds: TPR hits 1.0 at t = 0.7 where fp = 1 of 2.
        let samples = [(0.9, true), (0.8, false), (0.7, true), (0.6, false)];
        assert_eq!(fpr_at_95_tpr(&samples).unwrap(), Some(0.5));
    }

    #[test]
    fn fpr_perfect_separation_is_zero() {
        let samples = [(0.9, true), (0.8, true), (0.2, false)];
        assert_eq!(fpr_at_95_tpr(&samples).unwrap(), Some(0.0));
    }

    #[test]
    fn detection_metrics_reject_nan() {
        assert!(auroc(&[(f64::NAN, true), (0.1, false)]).is_err());
        assert!(aupr(&[(f64::NAN, true)]).is_err());
        assert!(fpr_at_95_tpr(&[(f64::NAN, true), (0.1, false)]).is_err());
    }

    #[test]
    fn ood_score_flips_confidence() {
        assert_eq!(ood_score(0.25), 0.75);
        let mask = BinaryMask::new(1, 2, vec![true, false]).unwrap();
        assert_eq!(mask.count_true(), 1);
    }

    proptest! {
        #[test]
        fn auroc_complement_without_ties(scores in proptest::collection::vec(0u32..1_000_000, 4..64)) {
            // Deduplicate to guarantee tie-free scores, then alternate labels.
            let mut distinct: Vec<u32> = scores;
            distinct.sort_unstable();
            distinct.dedup();
            prop_assume!(distinct.len() >= 4);
            let samples: Vec<(f64, bool)> = distinct
                .iter()
                .enumerate()
                .map(|(i, &s)| (s as f64, i % 2 == 0))
                .collect();
            let flipped: Vec<(f64, bool)> =
                samples.iter().map(|&(s, p)| (s, !p)).collect();
            let a = auroc(&samples).unwrap().unwrap();
            let b = auroc(&flipped).unwrap().unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(
            raw in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 2..64)
        ) {
            let has_pos = raw.iter().any(|(_, p)| *p);
            let has_neg = raw.iter().any(|(_, p)| !*p);
            prop_assume!(has_pos && has_neg);
            let transformed: Vec<(f64, bool)> = raw
                .iter()
                .map(|&(s, p)| (s.exp() * 3.0 + 1.0, p))
                .collect();
            let a = auroc(&raw).unwrap().unwrap();
            let b = auroc(&transformed).unwrap().unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn detection_metrics_stay_in_unit_interval(
            raw in proptest::collection::vec((0.0f64..1.0, proptest::bool::ANY), 2..128)
        ) {
            if let Some(a) = auroc(&raw).unwrap() {
                prop_assert!((0.0..=1.0).contains(&a));
            }
            if let Some(ap) = aupr(&raw).unwrap() {
                prop_assert!((0.0..=1.0).contains(&ap));
            }
            if let Some(f) = fpr_at_95_tpr(&raw).unwrap() {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }

        #[test]
        fn ece_bounded_and_bins_sum(
            confs in proptest::collection::vec(0.0f32..=1.0, 1..256),
            bins in 1usize..32
        ) {
            let n = confs.len();
            let conf = ConfidenceMap::new(1, n, confs.clone()).unwrap();
            let pred = ClassMap::new(1, n, 2, vec![0; n]).unwrap();
            let gt_data: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let gt = ClassMap::new(1, n, 2, gt_data).unwrap();
            let mut acc = BinnedCalibration::zeros(bins).unwrap();
            acc.accumulate(&conf, &pred, &gt, &BTreeSet::new()).unwrap();
            prop_assert_eq!(acc.total(), n as u64);
            let e = acc.ece().unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            for k in 0..bins {
                if let Some(mc) = acc.mean_confidence(k) {
                    let lo = k as f64 / bins as f64;
                    let hi = (k + 1) as f64 / bins as f64;
                    prop_assert!(mc >= lo - 1e-9 && mc <= hi + 1e-9);
                }
            }
        }

        #[test]
        fn miou_invariant_under_class_permutation(
            labels in proptest::collection::vec((0u8..4, 0u8..4), 8..128)
        ) {
            let n = labels.len();
            let gt_data: Vec<u8> = labels.iter().map(|&(g, _)| g).collect();
            let pred_data: Vec<u8> = labels.iter().map(|&(_, p)| p).collect();
            let perm = [2u8, 0, 3, 1];
            let gt = ClassMap::new(1, n, 4, gt_data.clone()).unwrap();
            let pred = ClassMap::new(1, n, 4, pred_data.clone()).unwrap();
            let gt_p = ClassMap::new(1, n, 4, gt_data.iter().map(|&g| perm[g as usize]).collect()).unwrap();
            let pred_p = ClassMap::new(1, n, 4, pred_data.iter().map(|&p| perm[p as usize]).collect()).unwrap();
            let none = BTreeSet::new();
            let a = confusion_matrix(&gt, &pred, &none, 4).unwrap().miou();
            let b = confusion_matrix(&gt_p, &pred_p, &none, 4).unwrap().miou();
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
        }
    }
}
