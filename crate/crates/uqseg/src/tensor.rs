//! Core raster types shared by every stage of the toolkit.
//!
//! All spatial data is row-major. Multi-channel tensors store channel as the
//! outermost axis, so the flat index of `(c, h, w)` is `(c * height + h) *
//! width + w`. Constructors validate the invariants of each type (value
//! ranges, finiteness, per-pixel probability sums) so downstream code can
//! rely on them without re-checking.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Label value reserved for pixels excluded from evaluation and training.
pub const IGNORE_ID: u8 = 255;

/// Maximum per-pixel deviation from 1.0 tolerated in a probability map.
pub const PROB_SUM_TOLERANCE: f64 = 1e-5;

fn checked_volume(dims: &[usize]) -> Result<usize> {
    let mut n: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::invalid("tensor dimensions must be nonzero"));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| Error::invalid("tensor dimensions overflow"))?;
    }
    Ok(n)
}

fn check_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::shape(format!(
            "{what}: expected {expected} values, got {got}"
        )));
    }
    Ok(())
}

/// Dense multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = checked_volume(&[channels, height, width])?;
        check_len(n, data.len(), "image tensor")?;
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "image values must be finite and in [0, 1], found {v}"
                )));
            }
        }
        Ok(ImageTensor { channels, height, width, data })
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        let n = checked_volume(&[channels, height, width])?;
        if !value.is_finite() || !(0.0..=1.0).contains(&value) {
            return Err(Error::invalid("constant image value out of [0, 1]"));
        }
        Ok(ImageTensor { channels, height, width, data: vec![value; n] })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f32 {
        self.data[(c * self.height + h) * self.width + w]
    }
}

/// Per-pixel class labels backed by 8-bit ids. `IGNORE_ID` marks excluded
/// pixels; every other value must be below `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMap {
    height: usize,
    width: usize,
    num_classes: usize,
    data: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, num_classes: usize, data: Vec<u8>) -> Result<Self> {
        let n = checked_volume(&[height, width])?;
        check_len(n, data.len(), "class map")?;
        if num_classes == 0 || num_classes > 255 {
            return Err(Error::invalid(format!(
                "num_classes must be in 1..=255, got {num_classes}"
            )));
        }
        for &id in &data {
            if id != IGNORE_ID && id as usize >= num_classes {
                return Err(Error::invalid(format!(
                    "class id {id} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(ClassMap { height, width, num_classes, data })
    }

    /// Re-tags the map with a different class count, re-validating the ids.
    pub fn with_num_classes(self, num_classes: usize) -> Result<Self> {
        ClassMap::new(self.height, self.width, num_classes, self.data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> u8 {
        self.data[h * self.width + w]
    }
}

/// Per-pixel mask of the given label ids (used to mark OOD ground truth).
pub fn ood_mask(gt: &ClassMap, ood_ids: &BTreeSet<u8>) -> BinaryMask {
    let data = gt.data().iter().map(|id| ood_ids.contains(id)).collect();
    BinaryMask { height: gt.height(), width: gt.width(), data }
}

/// Per-pixel confidence in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ConfidenceMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = checked_volume(&[height, width])?;
        check_len(n, data.len(), "confidence map")?;
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "confidence values must be finite and in [0, 1], found {v}"
                )));
            }
        }
        Ok(ConfidenceMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f32 {
        self.data[h * self.width + w]
    }
}

/// Per-pixel raw class scores, finite but otherwise unconstrained.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LogitMap {
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = checked_volume(&[num_classes, height, width])?;
        check_len(n, data.len(), "logit map")?;
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::invalid("logits must be finite"));
            }
        }
        Ok(LogitMap { num_classes, height, width, data })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Logit of class `c` at flat pixel index `p`.
    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f32 {
        self.data[c * self.pixel_count() + p]
    }

    /// Copies the class scores of flat pixel `p` into `out` as f64.
    pub fn pixel_logits(&self, p: usize, out: &mut Vec<f64>) {
        out.clear();
        let stride = self.pixel_count();
        out.extend((0..self.num_classes).map(|c| self.data[c * stride + p] as f64));
    }
}

/// Per-pixel class distribution; every pixel sums to 1 within
/// [`PROB_SUM_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    num_classes: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ProbabilityMap {
    pub fn new(num_classes: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let n = checked_volume(&[num_classes, height, width])?;
        check_len(n, data.len(), "probability map")?;
        for &v in &data {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "probabilities must be finite and in [0, 1], found {v}"
                )));
            }
        }
        let pixels = height * width;
        for p in 0..pixels {
            let sum: f64 = (0..num_classes).map(|c| data[c * pixels + p] as f64).sum();
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::invalid(format!(
                    "probabilities at pixel {p} sum to {sum}, expected 1"
                )));
            }
        }
        Ok(ProbabilityMap { num_classes, height, width, data })
    }

    /// Per-pixel softmax of the logits, computed in f64 with max
    /// subtraction for numerical stability.
    pub fn from_logits(logits: &LogitMap) -> Self {
        let pixels = logits.pixel_count();
        let nc = logits.num_classes();
        let mut data = vec![0f32; nc * pixels];
        let mut scratch = Vec::with_capacity(nc);
        for p in 0..pixels {
            logits.pixel_logits(p, &mut scratch);
            let max = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0f64;
            for v in scratch.iter_mut() {
                *v = (*v - max).exp();
                denom += *v;
            }
            for (c, v) in scratch.iter().enumerate() {
                data[c * pixels + p] = (v / denom) as f32;
            }
        }
        ProbabilityMap {
            num_classes: nc,
            height: logits.height(),
            width: logits.width(),
            data,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, c: usize, p: usize) -> f32 {
        self.data[c * self.pixel_count() + p]
    }
}

/// Per-pixel scalar field kept in f64 (energy scores, per-pixel losses).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let n = checked_volume(&[height, width])?;
        check_len(n, data.len(), "scalar map")?;
        for &v in &data {
            if !v.is_finite() {
                return Err(Error::invalid("scalar map values must be finite"));
            }
        }
        Ok(ScalarMap { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.width + w]
    }
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        let n = checked_volume(&[height, width])?;
        check_len(n, data.len(), "binary mask")?;
        Ok(BinaryMask { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        let n = checked_volume(&[height, width])?;
        Ok(BinaryMask { height, width, data: vec![value; n] })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> bool {
        self.data[h * self.width + w]
    }
}

/// Checks that two maps cover the same pixel grid.
pub fn check_same_grid(
    (ah, aw): (usize, usize),
    (bh, bw): (usize, usize),
    what: &str,
) -> Result<()> {
    if ah != bh || aw != bw {
        return Err(Error::shape(format!("{what}: {ah}x{aw} vs {bh}x{bw}")));
    }
    Ok(())
}
