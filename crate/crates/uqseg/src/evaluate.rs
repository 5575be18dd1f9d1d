//! Dataset evaluation: walks a manifest, pools per-record statistics, and
//! produces the five challenge metrics plus per-class IoU and pixel counts.
//!
//! Records are loaded in parallel, but their statistics are merged in
//! manifest order, so reports are identical for any thread count. In
//! `global` aggregation all pixels are pooled before computing each metric;
//! in `per-image` each record is scored on its own and the defined values
//! are averaged.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{load_class_map, load_confidence_map};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::metrics::{
    aupr, auroc, fpr_at_95_tpr, ood_score, BinnedCalibration, ConfusionMatrix,
    DEFAULT_ECE_BINS,
};
use crate::tensor::{check_same_grid, ClassMap, IGNORE_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Global,
    PerImage,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalConfig {
    pub aggregation: Aggregation,
    pub num_bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { aggregation: Aggregation::Global, num_bins: DEFAULT_ECE_BINS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelCounts {
    pub total: u64,
    pub evaluated: u64,
    pub ood: u64,
    pub ignored: u64,
}

impl PixelCounts {
    fn add(&mut self, other: &PixelCounts) {
        self.total += other.total;
        self.evaluated += other.evaluated;
        self.ood += other.ood;
        self.ignored += other.ignored;
    }
}

/// One row of published reference scores, in report column order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub mauroc: f64,
    pub maupr: f64,
    pub mfpr: f64,
    pub mece: f64,
    pub miou: f64,
}

/// Published score of a plain single-model softmax baseline on a public
/// driving-scene benchmark with planted anomalous objects and adverse
/// weather. Reaching it requires trained networks and the benchmark's
/// withheld test set, so it is not reproducible with this toolkit alone;
/// it is recorded to orient expectations about realistic metric ranges.
pub const REFERENCE_BASELINE: ReferenceScores = ReferenceScores {
    mauroc: 0.7337,
    maupr: 0.1790,
    mfpr: 0.5253,
    mece: 0.2880,
    miou: 0.3690,
};

/// Published score of a dropout-ensemble entry with plain temperature
/// scaling on the same benchmark as [`REFERENCE_BASELINE`].
pub const REFERENCE_DROPOUT_ENSEMBLE_TS: ReferenceScores = ReferenceScores {
    mauroc: 0.8219,
    maupr: 0.2261,
    mfpr: 0.3988,
    mece: 0.1005,
    miou: 0.4544,
};

/// Published score of the same dropout ensemble with polynomial
/// temperature scaling, the strongest of the three reference rows.
pub const REFERENCE_DROPOUT_ENSEMBLE_PTS: ReferenceScores = ReferenceScores {
    mauroc: 0.8356,
    maupr: 0.2502,
    mfpr: 0.3898,
    mece: 0.0942,
    miou: 0.4558,
};

/// Evaluation result. Metrics that were undefined on the data are `null`
/// in JSON and `NA` in CSV; they are never silently reported as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "mAUROC")]
    pub mauroc: Option<f64>,
    #[serde(rename = "mAUPR")]
    pub maupr: Option<f64>,
    #[serde(rename = "mFPR")]
    pub mfpr: Option<f64>,
    #[serde(rename = "mECE")]
    pub mece: Option<f64>,
    #[serde(rename = "mIoU")]
    pub miou: Option<f64>,
    pub per_class_iou: Vec<Option<f64>>,
    pub pixel_counts: PixelCounts,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "NA".to_string(),
    }
}

impl EvalReport {
    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv_string(&self) -> String {
        format!(
            "mAUROC,mAUPR,mFPR,mECE,mIoU\n{},{},{},{},{}\n",
            fmt_metric(self.mauroc),
            fmt_metric(self.maupr),
            fmt_metric(self.mfpr),
            fmt_metric(self.mece),
            fmt_metric(self.miou),
        )
    }

    /// Fixed-width summary table for terminal output.
    pub fn to_table_string(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "NA".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10}{:<10}{:<10}{:<10}{:<10}\n",
            "mAUROC", "mAUPR", "mFPR", "mECE", "mIoU"
        ));
        out.push_str(&format!(
            "{:<10}{:<10}{:<10}{:<10}{:<10}\n",
            cell(self.mauroc),
            cell(self.maupr),
            cell(self.mfpr),
            cell(self.mece),
            cell(self.miou),
        ));
        let c = &self.pixel_counts;
        out.push_str(&format!(
            "pixels: total={} evaluated={} ood={} ignored={}\n",
            c.total, c.evaluated, c.ood, c.ignored
        ));
        out
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_json_string())
            .map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_csv_string())
            .map_err(|e| Error::io(path.as_ref(), e))
    }
}

struct RecordEval {
    cm: ConfusionMatrix,
    bins: BinnedCalibration,
    samples: Vec<(f64, bool)>,
    counts: PixelCounts,
}

fn validate_gt(gt: &ClassMap, manifest: &DatasetManifest) -> Result<()> {
    for &g in gt.data() {
        let known = (g as usize) < manifest.num_classes
            || g == IGNORE_ID
            || manifest.ood_ids.contains(&g);
        if !known {
            return Err(Error::invalid(format!(
                "ground truth id {g} is neither a class, the ignore id, nor an OOD id"
            )));
        }
    }
    Ok(())
}

fn validate_pred(pred: &ClassMap, num_classes: usize) -> Result<()> {
    for &p in pred.data() {
        if p as usize >= num_classes {
            return Err(Error::invalid(format!(
                "prediction id {p} out of range for {num_classes} classes"
            )));
        }
    }
    Ok(())
}

fn eval_record(
    record: &ManifestRecord,
    manifest: &DatasetManifest,
    num_bins: usize,
) -> Result<RecordEval> {
    let gt = load_class_map(&record.gt)?;
    validate_gt(&gt, manifest)?;
    let pred = load_class_map(&record.pred)?;
    validate_pred(&pred, manifest.num_classes)?;
    let conf = load_confidence_map(&record.conf)?;
    check_same_grid(
        (gt.height(), gt.width()),
        (pred.height(), pred.width()),
        "ground truth vs prediction",
    )?;
    check_same_grid(
        (gt.height(), gt.width()),
        (conf.height(), conf.width()),
        "ground truth vs confidence",
    )?;

    let mut cm = ConfusionMatrix::zeros(manifest.num_classes)?;
    let mut bins = BinnedCalibration::zeros(num_bins)?;
    let mut samples = Vec::new();
    let mut counts = PixelCounts::default();
    for ((&g, &p), &c) in gt.data().iter().zip(pred.data()).zip(conf.data()) {
        counts.total += 1;
        if manifest.ood_ids.contains(&g) {
            counts.ood += 1;
            samples.push((ood_score(c), true));
        } else if g == IGNORE_ID {
            counts.ignored += 1;
        } else {
            counts.evaluated += 1;
            samples.push((ood_score(c), false));
            cm.accumulate_pixel(g, p)?;
            bins.observe(c as f64, p == g);
        }
    }
    Ok(RecordEval { cm, bins, samples, counts })
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let defined: Vec<f64> = values.flatten().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

pub fn evaluate_dataset(manifest: &DatasetManifest, cfg: &EvalConfig) -> Result<EvalReport> {
    if manifest.records.is_empty() {
        return Err(Error::usage("empty manifest"));
    }
    let results: Vec<(usize, Result<RecordEval>)> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, record)| (i, eval_record(record, manifest, cfg.num_bins)))
        .collect();

    let mut evals = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (i, result) in results {
        match result {
            Ok(e) => evals.push(e),
            Err(e) => failures.push((i, e)),
        }
    }
    if !failures.is_empty() {
        failures.sort_by_key(|(i, _)| *i);
        return Err(Error::Records(failures));
    }

    let mut counts = PixelCounts::default();
    for e in &evals {
        counts.add(&e.counts);
    }

    match cfg.aggregation {
        Aggregation::Global => {
            let mut cm = ConfusionMatrix::zeros(manifest.num_classes)?;
            let mut bins = BinnedCalibration::zeros(cfg.num_bins)?;
            let mut samples = Vec::new();
            for e in &evals {
                cm.merge(&e.cm)?;
                bins.merge(&e.bins)?;
                samples.extend_from_slice(&e.samples);
            }
            Ok(EvalReport {
                mauroc: auroc(&samples)?,
                maupr: aupr(&samples)?,
                mfpr: fpr_at_95_tpr(&samples)?,
                mece: bins.ece(),
                miou: cm.miou(),
                per_class_iou: cm.per_class_iou(),
                pixel_counts: counts,
            })
        }
        Aggregation::PerImage => {
            let mut aurocs = Vec::new();
            let mut auprs = Vec::new();
            let mut fprs = Vec::new();
            let mut eces = Vec::new();
            let mut mious = Vec::new();
            let mut per_class: Vec<Vec<Option<f64>>> = Vec::new();
            for e in &evals {
                aurocs.push(auroc(&e.samples)?);
                auprs.push(aupr(&e.samples)?);
                fprs.push(fpr_at_95_tpr(&e.samples)?);
                eces.push(e.bins.ece());
                mious.push(e.cm.miou());
                per_class.push(e.cm.per_class_iou());
            }
            let per_class_iou = (0..manifest.num_classes)
                .map(|c| mean_defined(per_class.iter().map(|row| row[c])))
                .collect();
            Ok(EvalReport {
                mauroc: mean_defined(aurocs.into_iter()),
                maupr: mean_defined(auprs.into_iter()),
                mfpr: mean_defined(fprs.into_iter()),
                mece: mean_defined(eces.into_iter()),
                miou: mean_defined(mious.into_iter()),
                per_class_iou,
                pixel_counts: counts,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{save_class_map, save_confidence_uqt1};
    use crate::manifest::default_ood_ids;
    use crate::tensor::ConfidenceMap;
    use std::path::PathBuf;
    use tempfile::tempdir;

    fn write_record(
        dir: &Path,
        tag: &str,
        gt: &ClassMap,
        pred: &ClassMap,
        conf: &ConfidenceMap,
    ) -> ManifestRecord {
        let gt_path = dir.join(format!("gt_{tag}.png"));
        let pred_path = dir.join(format!("pred_{tag}.png"));
        let conf_path = dir.join(format!("conf_{tag}.uqt1"));
        let image_path = dir.join(format!("img_{tag}.png"));
        save_class_map(&gt_path, gt).unwrap();
        save_class_map(&pred_path, pred).unwrap();
        save_confidence_uqt1(&conf_path, conf).unwrap();
        std::fs::write(&image_path, b"unused").unwrap();
        ManifestRecord {
            image: image_path,
            gt: gt_path,
            pred: pred_path,
            conf: conf_path,
            logits: None,
        }
    }

    fn tiny_dataset(dir: &Path) -> DatasetManifest {
        // Record 0: 1x4, gt [0, 1, 255(ood), 1], pred [0, 1, 0, 0],
        // conf [0.9, 0.8, 0.3, 0.6].
        let gt0 = ClassMap::new(1, 4, 2, vec![0, 1, IGNORE_ID, 1]).unwrap();
        let pred0 = ClassMap::new(1, 4, 2, vec![0, 1, 0, 0]).unwrap();
        let conf0 = ConfidenceMap::new(1, 4, vec![0.9, 0.8, 0.3, 0.6]).unwrap();
        // Record 1: 1x2, gt [0, 0], pred [0, 1], conf [0.7, 0.4].
        let gt1 = ClassMap::new(1, 2, 2, vec![0, 0]).unwrap();
        let pred1 = ClassMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let conf1 = ConfidenceMap::new(1, 2, vec![0.7, 0.4]).unwrap();
        let records = vec![
            write_record(dir, "0", &gt0, &pred0, &conf0),
            write_record(dir, "1", &gt1, &pred1, &conf1),
        ];
        DatasetManifest::from_records(records, 2, default_ood_ids()).unwrap()
    }

    #[test]
    fn global_report_matches_hand_computation() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let report = evaluate_dataset(&manifest, &EvalConfig::default()).unwrap();

        // Pixel partition: 6 total, 1 ood, 5 evaluated (255 is an ood id,
        // so nothing is merely ignored).
        assert_eq!(report.pixel_counts.total, 6);
        assert_eq!(report.pixel_counts.ood, 1);
        assert_eq!(report.pixel_counts.evaluated, 5);
        assert_eq!(report.pixel_counts.ignored, 0);

        // OOD scores 1-conf: ood pixel 0.7; inliers 0.1, 0.2, 0.4, 0.3, 0.6.
        // The positive outranks all negatives: AUROC = 1, AUPR = 1, FPR at
        // the t=0.7 threshold is 0/5.
        assert_eq!(report.mauroc, Some(1.0));
        assert_eq!(report.maupr, Some(1.0));
        assert_eq!(report.mfpr, Some(0.0));

        // Confusion: gt0/pred0 -> (0,0),(1,1),(1,0); gt1/pred1 -> (0,0),(0,1).
        // IoU(0) = 2/4, IoU(1) = 1/3, mIoU = 5/12.
        let miou = report.miou.unwrap();
        assert!((miou - 5.0 / 12.0).abs() < 1e-12);
        assert!((report.per_class_iou[0].unwrap() - 0.5).abs() < 1e-12);
        assert!((report.per_class_iou[1].unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn per_image_averages_defined_metrics() {
        let dir = tempdir().unwrap();
        let manifest = tiny_dataset(dir.path());
        let cfg = EvalConfig { aggregation: Aggregation::PerImage, ..Default::default() };
        let report = evaluate_dataset(&manifest, &cfg).unwrap();
        // Record 1 has no OOD pixel, so detection metrics come from record 0
        // alone; there AUROC = 1 (positive 0.7 vs negatives 0.1, 0.2, 0.4).
        assert_eq!(report.mauroc, Some(1.0));
        // mIoU: record 0 -> IoU(0)=1/2 (fp from ood-adjacent miss? no:
        // pairs (0,0),(1,1),(1,0)): IoU(0)=1/2, IoU(1)=1/2, mean 1/2.
        // Record 1 -> pairs (0,0),(0,1): IoU(0)=1/2, IoU(1)=0, mean 1/4.
        // Average = 3/8.
        let miou = report.miou.unwrap();
        assert!((miou - 0.375).abs() < 1e-12);
        // Pixel counts pool across records regardless of aggregation.
        assert_eq!(report.pixel_counts.total, 6);
    }

    #[test]
    fn single_record_reports_match_across_aggregations() {
        let dir = tempdir().unwrap();
        let gt = ClassMap::new(1, 3, 2, vec![0, 1, IGNORE_ID]).unwrap();
        let pred = ClassMap::new(1, 3, 2, vec![0, 1, 1]).unwrap();
        let conf = ConfidenceMap::new(1, 3, vec![0.9, 0.8, 0.2]).unwrap();
        let records = vec![write_record(dir.path(), "s", &gt, &pred, &conf)];
        let manifest = DatasetManifest::from_records(records, 2, default_ood_ids()).unwrap();
        let global = evaluate_dataset(&manifest, &EvalConfig::default()).unwrap();
        let per_image = evaluate_dataset(
            &manifest,
            &EvalConfig { aggregation: Aggregation::PerImage, ..Default::default() },
        )
        .unwrap();
        assert_eq!(global.to_json_string(), per_image.to_json_string());
        assert_eq!(global.to_csv_string(), per_image.to_csv_string());
    }

    #[test]
    fn no_ood_pixels_yield_null_detection_metrics() {
        let dir = tempdir().unwrap();
        let gt = ClassMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let pred = ClassMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let conf = ConfidenceMap::new(1, 2, vec![0.9, 0.8]).unwrap();
        let records = vec![write_record(dir.path(), "n", &gt, &pred, &conf)];
        let manifest = DatasetManifest::from_records(records, 2, default_ood_ids()).unwrap();
        let report = evaluate_dataset(&manifest, &EvalConfig::default()).unwrap();
        assert_eq!(report.mauroc, None);
        assert_eq!(report.maupr, None);
        assert_eq!(report.mfpr, None);
        assert!(report.mece.is_some());
        let json = report.to_json_string();
        assert!(json.contains("\"mAUROC\": null"));
        let csv = report.to_csv_string();
        assert!(csv.starts_with("mAUROC,mAUPR,mFPR,mECE,mIoU\n"));
        assert!(csv.contains("NA,NA,NA,"));
    }

    #[test]
    fn failing_records_carry_indices() {
        let dir = tempdir().unwrap();
        let manifest_ok = tiny_dataset(dir.path());
        let mut records = manifest_ok.records.clone();
        records[1].conf = PathBuf::from(dir.path().join("missing.uqt1"));
        let manifest = DatasetManifest::from_records(records, 2, default_ood_ids()).unwrap();
        let err = evaluate_dataset(&manifest, &EvalConfig::default()).unwrap_err();
        match err {
            Error::Records(items) => {
                assert_eq!(items.len(), 1);
                assert_eq!(items[0].0, 1);
            }
            other => panic!("expected record errors, got {other}"),
        }
    }

    #[test]
    fn gt_with_out_of_range_id_rejected() {
        let dir = tempdir().unwrap();
        // Class id 7 with num_classes = 2 and default ood ids: invalid.
        let gt = ClassMap::new(1, 2, 8, vec![0, 7]).unwrap();
        let pred = ClassMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let conf = ConfidenceMap::new(1, 2, vec![0.9, 0.8]).unwrap();
        let records = vec![write_record(dir.path(), "bad", &gt, &pred, &conf)];
        let manifest = DatasetManifest::from_records(records, 2, default_ood_ids()).unwrap();
        assert!(evaluate_dataset(&manifest, &EvalConfig::default()).is_err());

        // The same id listed as OOD makes the record valid.
        let ood: std::collections::BTreeSet<u8> = [IGNORE_ID, 7].into_iter().collect();
        let manifest2 =
            DatasetManifest::from_records(manifest.records.clone(), 2, ood).unwrap();
        let report = evaluate_dataset(&manifest2, &EvalConfig::default()).unwrap();
        assert_eq!(report.pixel_counts.ood, 1);
    }

    #[test]
    fn report_json_round_trips() {
        let report = EvalReport {
            mauroc: Some(0.75),
            maupr: None,
            mfpr: Some(0.5),
            mece: Some(0.1),
            miou: Some(0.4),
            per_class_iou: vec![Some(0.4), None],
            pixel_counts: PixelCounts { total: 10, evaluated: 8, ood: 1, ignored: 1 },
        };
        let parsed: EvalReport = serde_json::from_str(&report.to_json_string()).unwrap();
        assert_eq!(parsed, report);
    }
}
