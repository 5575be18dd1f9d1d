//! Ensemble fusion of predictions and confidence maps: probability
//! averaging, majority voting, reciprocal confidence pooling, overlay
//! splicing, connected-region confidence normalization, and
//! bias-disagreement OOD masks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_same_grid, BinaryMask, ClassMap, ConfidenceMap, ProbabilityMap};

/// Reciprocal fusion clamps confidences below this before inverting.
pub const RECIPROCAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VoteConfig {
    /// Index of the model whose prediction wins tied votes.
    pub preferred_model: usize,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig { preferred_model: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> std::result::Result<Self, String> {
        match value {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(format!("connectivity must be 4 or 8, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(value: Connectivity) -> u8 {
        match value {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionNormConfig {
    /// Pixels below this confidence are smoothed and grouped into regions.
    pub low_conf_threshold: f64,
    /// A region counts as OOD when more than this fraction of its pixels
    /// sit below `ood_conf_threshold`.
    pub ood_fraction_threshold: f64,
    pub ood_conf_threshold: f64,
    /// Odd side length of the mean filter window; 1 disables smoothing.
    pub mean_filter_kernel: usize,
    pub connectivity: Connectivity,
}

impl Default for RegionNormConfig {
    fn default() -> Self {
        RegionNormConfig {
            low_conf_threshold: 0.6,
            ood_fraction_threshold: 0.5,
            ood_conf_threshold: 0.4,
            mean_filter_kernel: 3,
            connectivity: Connectivity::Eight,
        }
    }
}

impl RegionNormConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("low_conf_threshold", self.low_conf_threshold),
            ("ood_fraction_threshold", self.ood_fraction_threshold),
            ("ood_conf_threshold", self.ood_conf_threshold),
        ] {
            if !value.is_finite() || !(0.0..=1.0).contains(&value) {
                return Err(Error::invalid(format!(
                    "{name} must be in [0, 1], got {value}"
                )));
            }
        }
        if self.mean_filter_kernel == 0 || self.mean_filter_kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "mean_filter_kernel must be odd and positive, got {}",
                self.mean_filter_kernel
            )));
        }
        Ok(())
    }
}

/// Element-wise mean of probability maps from multiple models.
pub fn average_probs(maps: &[ProbabilityMap]) -> Result<ProbabilityMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::invalid("probability averaging needs at least one map"))?;
    for (i, map) in maps.iter().enumerate().skip(1) {
        check_same_grid(
            (first.height(), first.width()),
            (map.height(), map.width()),
            "probability maps",
        )?;
        if map.num_classes() != first.num_classes() {
            return Err(Error::shape(format!(
                "map {} has {} classes, expected {}",
                i,
                map.num_classes(),
                first.num_classes()
            )));
        }
    }
    let scale = 1.0 / maps.len() as f64;
    let data: Vec<f32> = (0..first.data().len())
        .map(|i| (maps.iter().map(|m| m.data()[i] as f64).sum::<f64>() * scale) as f32)
        .collect();
    ProbabilityMap::new(first.num_classes(), first.height(), first.width(), data)
}

/// Per-pixel majority vote over class maps. Ties on the maximum count fall
/// back to the preferred model's prediction.
pub fn majority_vote(preds: &[ClassMap], config: &VoteConfig) -> Result<ClassMap> {
    if preds.len() < 2 {
        return Err(Error::invalid("majority vote needs at least two predictions"));
    }
    if config.preferred_model >= preds.len() {
        return Err(Error::invalid(format!(
            "preferred model {} out of range for {} predictions",
            config.preferred_model,
            preds.len()
        )));
    }
    let first = &preds[0];
    for map in &preds[1..] {
        check_same_grid(
            (first.height(), first.width()),
            (map.height(), map.width()),
            "predictions",
        )?;
        if map.num_classes() != first.num_classes() {
            return Err(Error::shape(format!(
                "predictions disagree on class count: {} vs {}",
                map.num_classes(),
                first.num_classes()
            )));
        }
    }
    let pixels = first.data().len();
    let mut out = Vec::with_capacity(pixels);
    let mut counts: Vec<(u8, u32)> = Vec::with_capacity(preds.len());
    for p in 0..pixels {
        counts.clear();
        for map in preds {
            let id = map.data()[p];
            match counts.iter_mut().find(|(c, _)| *c == id) {
                Some((_, n)) => *n += 1,
                None => counts.push((id, 1)),
            }
        }
        let max = counts.iter().map(|&(_, n)| n).max().expect("nonempty vote");
        let mut winners = counts.iter().filter(|&&(_, n)| n == max);
        let first_winner = winners.next().expect("max exists").0;
        out.push(if winners.next().is_some() {
            preds[config.preferred_model].data()[p]
        } else {
            first_winner
        });
    }
    ClassMap::new(first.height(), first.width(), first.num_classes(), out)
}

/// Harmonic-style pooling `1 / (1/a + 1/b)`, with confidences clamped to
/// [`RECIPROCAL_FLOOR`] before inverting. The result never exceeds either
/// input.
pub fn reciprocal_fuse(a: &ConfidenceMap, b: &ConfidenceMap) -> Result<ConfidenceMap> {
    check_same_grid((a.height(), a.width()), (b.height(), b.width()), "confidence maps")?;
    let data: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let x = (x as f64).max(RECIPROCAL_FLOOR);
            let y = (y as f64).max(RECIPROCAL_FLOOR);
            (1.0 / (1.0 / x + 1.0 / y)) as f32
        })
        .collect();
    ConfidenceMap::new(a.height(), a.width(), data)
}

/// Splices two confidence maps: where the overlay is strictly below the
/// threshold its value wins, elsewhere the background value is kept.
pub fn overlay_fuse(
    background: &ConfidenceMap,
    overlay: &ConfidenceMap,
    threshold: f64,
) -> Result<ConfidenceMap> {
    if !threshold.is_finite() || !(0.0..=1.0).contains(&threshold) {
        return Err(Error::invalid(format!(
            "overlay threshold must be in [0, 1], got {threshold}"
        )));
    }
    check_same_grid(
        (background.height(), background.width()),
        (overlay.height(), overlay.width()),
        "confidence maps",
    )?;
    let data: Vec<f32> = background
        .data()
        .iter()
        .zip(overlay.data())
        .map(|(&bg, &ov)| if (ov as f64) < threshold { ov } else { bg })
        .collect();
    ConfidenceMap::new(background.height(), background.width(), data)
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

/// Normalizes confidence inside low-confidence regions. Low pixels are
/// first mean-filtered (window means taken over the original values, with
/// windows shrunk at the border), then grouped into connected components
/// of the filtered low set; components whose fraction of pixels below the
/// OOD threshold strictly exceeds the fraction threshold are flattened to
/// their minimum confidence.
pub fn region_normalize(conf: &ConfidenceMap, config: &RegionNormConfig) -> Result<ConfidenceMap> {
    config.validate()?;
    let (h, w) = (conf.height(), conf.width());
    let orig = conf.data();
    let mut filtered: Vec<f32> = orig.to_vec();
    if config.mean_filter_kernel > 1 {
        let r = config.mean_filter_kernel / 2;
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if (orig[p] as f64) >= config.low_conf_threshold {
                    continue;
                }
                let mut sum = 0f64;
                let mut n = 0usize;
                for y2 in y.saturating_sub(r)..=(y + r).min(h - 1) {
                    for x2 in x.saturating_sub(r)..=(x + r).min(w - 1) {
                        sum += orig[y2 * w + x2] as f64;
                        n += 1;
                    }
                }
                filtered[p] = (sum / n as f64) as f32;
            }
        }
    }

    let low: Vec<bool> = filtered
        .iter()
        .map(|&v| (v as f64) < config.low_conf_threshold)
        .collect();
    let mut uf = UnionFind::new(h * w);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if !low[p] {
                continue;
            }
            if x > 0 && low[p - 1] {
                uf.union(p, p - 1);
            }
            if y > 0 {
                if low[p - w] {
                    uf.union(p, p - w);
                }
                if config.connectivity == Connectivity::Eight {
                    if x > 0 && low[p - w - 1] {
                        uf.union(p, p - w - 1);
                    }
                    if x + 1 < w && low[p - w + 1] {
                        uf.union(p, p - w + 1);
                    }
                }
            }
        }
    }

    struct Component {
        count: usize,
        below: usize,
        min: f32,
    }
    let mut components: HashMap<usize, Component> = HashMap::new();
    for p in 0..h * w {
        if !low[p] {
            continue;
        }
        let root = uf.find(p);
        let entry = components
            .entry(root)
            .or_insert(Component { count: 0, below: 0, min: f32::INFINITY });
        entry.count += 1;
        if (filtered[p] as f64) < config.ood_conf_threshold {
            entry.below += 1;
        }
        entry.min = entry.min.min(filtered[p]);
    }

    let mut out = filtered;
    for p in 0..h * w {
        if !low[p] {
            continue;
        }
        let root = uf.find(p);
        let comp = &components[&root];
        if comp.below as f64 > config.ood_fraction_threshold * comp.count as f64 {
            out[p] = comp.min;
        }
    }
    ConfidenceMap::new(h, w, out)
}

/// Marks pixels where each model predicts exactly the class it is biased
/// toward; simultaneous agreement with both biases flags likely OOD.
pub fn bias_disagreement_ood(
    pred_a: &ClassMap,
    pred_b: &ClassMap,
    bias_a: u8,
    bias_b: u8,
) -> Result<BinaryMask> {
    check_same_grid(
        (pred_a.height(), pred_a.width()),
        (pred_b.height(), pred_b.width()),
        "predictions",
    )?;
    let data: Vec<bool> = pred_a
        .data()
        .iter()
        .zip(pred_b.data())
        .map(|(&a, &b)| a == bias_a && b == bias_b)
        .collect();
    BinaryMask::new(pred_a.height(), pred_a.width(), data)
}
