//! Segmentation losses on serialized logits: per-pixel cross entropy,
//! online hard example mining, focal loss, and soft-label cross entropy.
//!
//! All losses are computed in f64 with max-subtracted log-sum-exp. Ignored
//! pixels carry no loss and are excluded from every mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_same_grid, BinaryMask, ClassMap, LogitMap, ProbabilityMap, ScalarMap};

/// Probabilities at or below zero are clamped to this before the log.
pub const FOCAL_PROB_FLOOR: f64 = 1e-12;

/// Per-pixel losses with a validity flag per pixel. Ignored pixels are
/// invalid and hold the value zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl LossMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let pixels = height
            .checked_mul(width)
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::shape(format!("bad loss map shape {height}x{width}")))?;
        if values.len() != pixels || valid.len() != pixels {
            return Err(Error::shape(format!(
                "loss map {height}x{width} expects {pixels} values, got {} values and {} flags",
                values.len(),
                valid.len()
            )));
        }
        for (i, (&v, &ok)) in values.iter().zip(&valid).enumerate() {
            if ok && !v.is_finite() {
                return Err(Error::invalid(format!("non-finite loss at pixel {i}")));
            }
        }
        Ok(LossMap { height, width, values, valid })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Mean over valid pixels; `None` when every pixel is ignored.
    pub fn mean(&self) -> Option<f64> {
        let mut sum = 0f64;
        let mut n = 0usize;
        for (&v, &ok) in self.values.iter().zip(&self.valid) {
            if ok {
                sum += v;
                n += 1;
            }
        }
        if n == 0 {
            None
        } else {
            Some(sum / n as f64)
        }
    }

    /// Values with ignored pixels zeroed, for serialization.
    pub fn to_scalar_map(&self) -> ScalarMap {
        ScalarMap::new(self.height, self.width, self.values.clone())
            .expect("loss values are finite")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OhemConfig {
    /// Pixels with loss strictly above this are always kept.
    pub base_threshold: f64,
    /// Minimum number of pixels to keep; topped up from the hardest
    /// remaining pixels when too few clear the threshold.
    pub min_kept: usize,
    pub ignore_id: u8,
}

impl Default for OhemConfig {
    fn default() -> Self {
        OhemConfig {
            base_threshold: 0.7,
            min_kept: 100_000,
            ignore_id: crate::tensor::IGNORE_ID,
        }
    }
}

impl OhemConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.base_threshold.is_finite() || self.base_threshold < 0.0 {
            return Err(Error::invalid(format!(
                "base_threshold must be finite and nonnegative, got {}",
                self.base_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocalConfig {
    pub alpha_scale: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig { alpha_scale: 0.5, gamma: 2.0 }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.alpha_scale.is_finite() || self.alpha_scale <= 0.0 {
            return Err(Error::invalid(format!(
                "alpha_scale must be finite and positive, got {}",
                self.alpha_scale
            )));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::invalid(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

fn check_labels(logits: &LogitMap, gt: &ClassMap, ignore_id: u8) -> Result<()> {
    check_same_grid(
        (logits.height(), logits.width()),
        (gt.height(), gt.width()),
        "logits and ground truth",
    )?;
    let num_classes = logits.num_classes();
    for (i, &id) in gt.data().iter().enumerate() {
        if id != ignore_id && id as usize >= num_classes {
            return Err(Error::invalid(format!(
                "label {id} at pixel {i} exceeds {num_classes} classes"
            )));
        }
    }
    Ok(())
}

fn logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Per-pixel cross entropy `logsumexp(z) - z_true`; pixels labeled
/// `ignore_id` are marked invalid.
pub fn pixel_ce(logits: &LogitMap, gt: &ClassMap, ignore_id: u8) -> Result<LossMap> {
    check_labels(logits, gt, ignore_id)?;
    let pixels = logits.pixel_count();
    let mut values = vec![0f64; pixels];
    let mut valid = vec![false; pixels];
    let mut row = Vec::new();
    for p in 0..pixels {
        let id = gt.data()[p];
        if id == ignore_id {
            continue;
        }
        logits.pixel_logits(p, &mut row);
        values[p] = logsumexp(&row) - row[id as usize];
        valid[p] = true;
    }
    LossMap::new(logits.height(), logits.width(), values, valid)
}

/// Online hard example mining over a loss map. Keeps every valid pixel with
/// loss strictly above the base threshold; when fewer than `min_kept` clear
/// it, keeps the `min_kept` hardest instead (ties broken toward the lower
/// pixel index). Returns the selection mask and the mean loss over it, zero
/// when nothing is selected.
pub fn ohem_select(losses: &LossMap, config: &OhemConfig) -> Result<(BinaryMask, f64)> {
    config.validate()?;
    let mut order: Vec<usize> = (0..losses.values.len()).filter(|&p| losses.valid[p]).collect();
    order.sort_by(|&a, &b| {
        losses.values[b]
            .partial_cmp(&losses.values[a])
            .expect("loss values are finite")
            .then(a.cmp(&b))
    });
    let above = order
        .iter()
        .filter(|&&p| losses.values[p] > config.base_threshold)
        .count();
    let keep = above.max(config.min_kept).min(order.len());
    let mut mask = vec![false; losses.values.len()];
    let mut sum = 0f64;
    for &p in &order[..keep] {
        mask[p] = true;
        sum += losses.values[p];
    }
    let scalar = if keep == 0 { 0.0 } else { sum / keep as f64 };
    Ok((BinaryMask::new(losses.height, losses.width, mask)?, scalar))
}

/// Cross entropy with online hard example mining.
pub fn ohem_ce(
    logits: &LogitMap,
    gt: &ClassMap,
    config: &OhemConfig,
) -> Result<(BinaryMask, f64)> {
    ohem_select(&pixel_ce(logits, gt, config.ignore_id)?, config)
}

/// Softmax probability of the true class per pixel. Ignored pixels get
/// probability one so that downstream losses vanish there.
pub fn true_class_prob(logits: &LogitMap, gt: &ClassMap, ignore_id: u8) -> Result<ScalarMap> {
    check_labels(logits, gt, ignore_id)?;
    let pixels = logits.pixel_count();
    let mut values = vec![1f64; pixels];
    let mut row = Vec::new();
    for p in 0..pixels {
        let id = gt.data()[p];
        if id == ignore_id {
            continue;
        }
        logits.pixel_logits(p, &mut row);
        values[p] = (row[id as usize] - logsumexp(&row)).exp();
    }
    ScalarMap::new(logits.height(), logits.width(), values)
}

/// Focal loss `-alpha * (1 - p)^gamma * ln(p)` over true-class
/// probabilities. Probabilities above one are rejected; probabilities at or
/// below zero are clamped to [`FOCAL_PROB_FLOOR`] and counted in the second
/// return value.
pub fn focal_loss(prob_true: &ScalarMap, config: &FocalConfig) -> Result<(ScalarMap, usize)> {
    config.validate()?;
    let mut clamped = 0usize;
    let mut values = Vec::with_capacity(prob_true.data().len());
    for (i, &p) in prob_true.data().iter().enumerate() {
        if p > 1.0 {
            return Err(Error::invalid(format!(
                "probability {p} at pixel {i} exceeds one"
            )));
        }
        let p = if p <= 0.0 {
            clamped += 1;
            FOCAL_PROB_FLOOR
        } else {
            p
        };
        values.push(-config.alpha_scale * (1.0 - p).powf(config.gamma) * p.ln());
    }
    Ok((
        ScalarMap::new(prob_true.height(), prob_true.width(), values)?,
        clamped,
    ))
}

/// Cross entropy against per-pixel soft label distributions:
/// `-sum_c t_c * ln(softmax(z)_c)`.
pub fn soft_ce(logits: &LogitMap, targets: &ProbabilityMap) -> Result<ScalarMap> {
    check_same_grid(
        (logits.height(), logits.width()),
        (targets.height(), targets.width()),
        "logits and targets",
    )?;
    if logits.num_classes() != targets.num_classes() {
        return Err(Error::shape(format!(
            "logits have {} classes, targets {}",
            logits.num_classes(),
            targets.num_classes()
        )));
    }
    let pixels = logits.pixel_count();
    let mut values = Vec::with_capacity(pixels);
    let mut row = Vec::new();
    for p in 0..pixels {
        logits.pixel_logits(p, &mut row);
        let lse = logsumexp(&row);
        let mut loss = 0f64;
        for (c, &z) in row.iter().enumerate() {
            let t = targets.at(c, p) as f64;
            if t != 0.0 {
                loss += t * (lse - z);
            }
        }
        values.push(loss);
    }
    ScalarMap::new(logits.height(), logits.width(), values)
}

/// Analytic gradient of mean cross entropy with respect to the logits,
/// `(softmax(z) - onehot(y)) / n_valid`, laid out like the logit map.
/// Ignored pixels get a zero gradient.
pub fn ce_gradient(logits: &LogitMap, gt: &ClassMap, ignore_id: u8) -> Result<Vec<f64>> {
    check_labels(logits, gt, ignore_id)?;
    let pixels = logits.pixel_count();
    let num_classes = logits.num_classes();
    let n_valid = gt.data().iter().filter(|&&id| id != ignore_id).count();
    let mut grad = vec![0f64; num_classes * pixels];
    if n_valid == 0 {
        return Ok(grad);
    }
    let scale = 1.0 / n_valid as f64;
    let mut row = Vec::new();
    for p in 0..pixels {
        let id = gt.data()[p];
        if id == ignore_id {
            continue;
        }
        logits.pixel_logits(p, &mut row);
        let lse = logsumexp(&row);
        for (c, &z) in row.iter().enumerate() {
            let softmax = (z - lse).exp();
            let target = if c == id as usize { 1.0 } else { 0.0 };
            grad[c * pixels + p] = (softmax - target) * scale;
        }
    }
    Ok(grad)
}
