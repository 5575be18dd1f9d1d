//! Test-time normalization-statistics adaptation: Gaussian KL divergence
//! between instance and running statistics, a sigmoid-normalized mixing
//! coefficient, and the blended statistics themselves.
//!
//! Statistics are stored per layer as channel-wise mean and standard
//! deviation vectors. The KL direction is instance-first:
//! `KL(N(mu(x), sigma(x)) || N(mu_r, sigma_r))`, averaged over channels per
//! layer and over layers overall, then squashed with a sigmoid. Identical
//! statistics therefore yield alpha = 0.5, not 0; that is the literal
//! formula, preserved deliberately.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_uqt1, write_uqt1, TensorData};

/// Epsilon added to the variance when normalizing features.
pub const BN_EPSILON: f64 = 1e-5;

/// Channel-wise mean and standard deviation of one normalization layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    name: String,
    mean: Vec<f32>,
    std: Vec<f32>,
}

fn valid_layer_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl LayerStats {
    pub fn new(name: impl Into<String>, mean: Vec<f32>, std: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if !valid_layer_name(&name) {
            return Err(Error::invalid(format!(
                "layer name '{name}' must be nonempty alphanumeric/underscore/dash"
            )));
        }
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::shape(format!(
                "layer '{name}': mean has {} channels, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("layer '{name}': mean must be finite")));
        }
        if std.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(format!(
                "layer '{name}': std must be finite and positive"
            )));
        }
        Ok(LayerStats { name, mean, std })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn std(&self) -> &[f32] {
        &self.std
    }
}

/// Ordered per-layer statistics of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    layers: Vec<LayerStats>,
}

impl FeatureStats {
    pub fn new(layers: Vec<LayerStats>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("feature statistics need at least one layer"));
        }
        for i in 1..layers.len() {
            if layers[..i].iter().any(|l| l.name == layers[i].name) {
                return Err(Error::invalid(format!(
                    "duplicate layer name '{}'",
                    layers[i].name
                )));
            }
        }
        Ok(FeatureStats { layers })
    }

    pub fn layers(&self) -> &[LayerStats] {
        &self.layers
    }

    fn check_compatible(&self, other: &FeatureStats) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape(format!(
                "statistics with {} vs {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.name != b.name {
                return Err(Error::shape(format!(
                    "layer name mismatch: '{}' vs '{}'",
                    a.name, b.name
                )));
            }
            if a.channels() != b.channels() {
                return Err(Error::shape(format!(
                    "layer '{}': {} vs {} channels",
                    a.name,
                    a.channels(),
                    b.channels()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingCoefficient {
    pub alpha: f64,
}

impl MixingCoefficient {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid(format!(
                "mixing coefficient must be in [0, 1], got {alpha}"
            )));
        }
        Ok(MixingCoefficient { alpha })
    }
}

/// KL divergence between two univariate Gaussians,
/// `KL(N(mu1, sigma1) || N(mu2, sigma2))`.
pub fn gaussian_kl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64> {
    if !mu1.is_finite() || !mu2.is_finite() {
        return Err(Error::invalid("KL means must be finite"));
    }
    if !(sigma1.is_finite() && sigma1 > 0.0 && sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::invalid("KL standard deviations must be finite and positive"));
    }
    let d = mu1 - mu2;
    Ok((sigma2 / sigma1).ln() + (sigma1 * sigma1 + d * d) / (2.0 * sigma2 * sigma2) - 0.5)
}

/// Mixing coefficient from the divergence between instance and running
/// statistics: channel KLs (instance first) averaged per layer, layer
/// averages averaged again, then passed through a sigmoid.
pub fn mixing_coefficient(
    running: &FeatureStats,
    instance: &FeatureStats,
) -> Result<MixingCoefficient> {
    running.check_compatible(instance)?;
    let mut layer_sum = 0f64;
    for (run, inst) in running.layers.iter().zip(&instance.layers) {
        let mut channel_sum = 0f64;
        for c in 0..run.channels() {
            channel_sum += gaussian_kl(
                inst.mean[c] as f64,
                inst.std[c] as f64,
                run.mean[c] as f64,
                run.std[c] as f64,
            )?;
        }
        layer_sum += channel_sum / run.channels() as f64;
    }
    let mean_kl = layer_sum / running.layers.len() as f64;
    let alpha = 1.0 / (1.0 + (-mean_kl).exp());
    MixingCoefficient::new(alpha)
}

/// Blends running and instance statistics: means interpolate linearly,
/// variances interpolate linearly and the result takes their square root.
/// Alpha 0 returns the running statistics bit-exactly, alpha 1 the
/// instance statistics.
pub fn mix_stats(
    running: &FeatureStats,
    instance: &FeatureStats,
    alpha: &MixingCoefficient,
) -> Result<FeatureStats> {
    running.check_compatible(instance)?;
    MixingCoefficient::new(alpha.alpha)?;
    let a = alpha.alpha;
    let mut layers = Vec::with_capacity(running.layers.len());
    for (run, inst) in running.layers.iter().zip(&instance.layers) {
        let mut mean = Vec::with_capacity(run.channels());
        let mut std = Vec::with_capacity(run.channels());
        for c in 0..run.channels() {
            let mu = a * inst.mean[c] as f64 + (1.0 - a) * run.mean[c] as f64;
            let var_i = (inst.std[c] as f64) * (inst.std[c] as f64);
            let var_r = (run.std[c] as f64) * (run.std[c] as f64);
            let var = a * var_i + (1.0 - a) * var_r;
            mean.push(mu as f32);
            std.push(var.sqrt() as f32);
        }
        layers.push(LayerStats::new(run.name.clone(), mean, std)?);
    }
    FeatureStats::new(layers)
}

/// Standardizes a `C x H x W` feature tensor with one layer's statistics:
/// `(v - mean_c) / sqrt(var_c + epsilon)` per channel.
pub fn normalize_features(
    features: &TensorData,
    stats: &FeatureStats,
    layer: usize,
    epsilon: f64,
) -> Result<TensorData> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::invalid("epsilon must be finite and nonnegative"));
    }
    let stats = stats
        .layers
        .get(layer)
        .ok_or_else(|| Error::invalid(format!("layer index {layer} out of range")))?;
    let dims = features.dims();
    if dims.len() != 3 {
        return Err(Error::shape(format!(
            "features must be 3-D (channels x height x width), got {}-D",
            dims.len()
        )));
    }
    if dims[0] != stats.channels() {
        return Err(Error::shape(format!(
            "features have {} channels, layer '{}' has {}",
            dims[0],
            stats.name,
            stats.channels()
        )));
    }
    let plane = dims[1] * dims[2];
    let mut out = Vec::with_capacity(features.data().len());
    for c in 0..dims[0] {
        let mu = stats.mean[c] as f64;
        let sigma = stats.std[c] as f64;
        let denom = (sigma * sigma + epsilon).sqrt();
        for p in 0..plane {
            let v = features.data()[c * plane + p] as f64;
            out.push(((v - mu) / denom) as f32);
        }
    }
    TensorData::new(dims.to_vec(), out)
}

#[derive(Serialize, Deserialize)]
struct IndexLayer {
    name: String,
    channels: usize,
    mean: String,
    std: String,
}

#[derive(Serialize, Deserialize)]
struct StatsIndex {
    layers: Vec<IndexLayer>,
}

/// Writes statistics as one `index.json` plus a pair of 2-D (1 x channels)
/// UQT1 tensors per layer.
pub fn save_feature_stats(dir: impl AsRef<Path>, stats: &FeatureStats) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = StatsIndex { layers: Vec::new() };
    for layer in &stats.layers {
        let mean_name = format!("{}_mean.uqt1", layer.name);
        let std_name = format!("{}_std.uqt1", layer.name);
        write_uqt1(
            dir.join(&mean_name),
            &TensorData::new(vec![1, layer.channels()], layer.mean.clone())?,
        )?;
        write_uqt1(
            dir.join(&std_name),
            &TensorData::new(vec![1, layer.channels()], layer.std.clone())?,
        )?;
        index.layers.push(IndexLayer {
            name: layer.name.clone(),
            channels: layer.channels(),
            mean: mean_name,
            std: std_name,
        });
    }
    let path = dir.join("index.json");
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::invalid(format!("cannot serialize index: {e}")))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_feature_stats(dir: impl AsRef<Path>) -> Result<FeatureStats> {
    let dir = dir.as_ref();
    let index_path = dir.join("index.json");
    let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let index: StatsIndex = serde_json::from_str(&text)
        .map_err(|e| Error::decode(&index_path, e.to_string()))?;
    let mut layers = Vec::with_capacity(index.layers.len());
    for entry in &index.layers {
        let load_vector = |file: &str| -> Result<Vec<f32>> {
            let path = dir.join(file);
            let tensor = read_uqt1(&path)?;
            if tensor.dims() != [1, entry.channels] {
                return Err(Error::decode(
                    &path,
                    format!(
                        "expected a 1x{} tensor, got {:?}",
                        entry.channels,
                        tensor.dims()
                    ),
                ));
            }
            Ok(tensor.data().to_vec())
        };
        layers.push(LayerStats::new(
            entry.name.clone(),
            load_vector(&entry.mean)?,
            load_vector(&entry.std)?,
        )?);
    }
    FeatureStats::new(layers)
}
