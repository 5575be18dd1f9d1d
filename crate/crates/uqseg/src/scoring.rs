//! Confidence scoring of raw network logits: argmax predictions, maximum
//! softmax probability, and the free-energy score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ClassMap, ConfidenceMap, LogitMap, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMethod {
    #[default]
    Msp,
    Energy,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub method: ScoreMethod,
    /// Min-max normalize energy scores into a confidence map. When false,
    /// the energy channel is returned as a raw scalar field instead.
    pub normalize_energy: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig { method: ScoreMethod::Msp, normalize_energy: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScoreOutput {
    Confidence(ConfidenceMap),
    RawEnergy(ScalarMap),
}

fn check_multiclass(logits: &LogitMap) -> Result<()> {
    if logits.num_classes() < 2 {
        return Err(Error::invalid("scoring needs at least two classes"));
    }
    Ok(())
}

/// Highest-scoring class per pixel; ties resolve to the lowest class index.
pub fn argmax_prediction(logits: &LogitMap) -> Result<ClassMap> {
    check_multiclass(logits)?;
    if logits.num_classes() > 255 {
        return Err(Error::invalid(format!(
            "cannot express {} classes in an 8-bit class map",
            logits.num_classes()
        )));
    }
    let pixels = logits.pixel_count();
    let mut data = vec![0u8; pixels];
    for (p, out) in data.iter_mut().enumerate() {
        let mut best = 0usize;
        let mut best_v = logits.at(0, p);
        for c in 1..logits.num_classes() {
            let v = logits.at(c, p);
            if v > best_v {
                best_v = v;
                best = c;
            }
        }
        *out = best as u8;
    }
    ClassMap::new(logits.height(), logits.width(), logits.num_classes(), data)
}

/// Maximum softmax probability per pixel, computed in f64 with max
/// subtraction so that adding a constant to a pixel's logits leaves the
/// result unchanged up to rounding.
pub fn msp_confidence(logits: &LogitMap) -> Result<ConfidenceMap> {
    check_multiclass(logits)?;
    let pixels = logits.pixel_count();
    let mut data = vec![0f32; pixels];
    let mut scratch = Vec::with_capacity(logits.num_classes());
    for (p, out) in data.iter_mut().enumerate() {
        logits.pixel_logits(p, &mut scratch);
        let max = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scratch.iter().map(|&v| (v - max).exp()).sum();
        *out = (1.0 / denom) as f32;
    }
    ConfidenceMap::new(logits.height(), logits.width(), data)
}

/// Free energy per pixel: `logsumexp` over the class logits.
pub fn energy_score(logits: &LogitMap) -> Result<ScalarMap> {
    check_multiclass(logits)?;
    let pixels = logits.pixel_count();
    let mut data = vec![0f64; pixels];
    let mut scratch = Vec::with_capacity(logits.num_classes());
    for (p, out) in data.iter_mut().enumerate() {
        logits.pixel_logits(p, &mut scratch);
        let max = scratch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scratch.iter().map(|&v| (v - max).exp()).sum();
        *out = max + sum.ln();
    }
    ScalarMap::new(logits.height(), logits.width(), data)
}

/// Min-max normalizes an energy map into `[0, 1]` per image. A constant
/// map has no spread to normalize and becomes 0.5 everywhere.
pub fn energy_to_confidence(energy: &ScalarMap) -> Result<ConfidenceMap> {
    let min = energy.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let max = energy.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let data: Vec<f32> = if max == min {
        vec![0.5; energy.data().len()]
    } else {
        let span = max - min;
        energy
            .data()
            .iter()
            .map(|&v| (((v - min) / span).clamp(0.0, 1.0)) as f32)
            .collect()
    };
    ConfidenceMap::new(energy.height(), energy.width(), data)
}

/// Prediction plus confidence channel for the configured method.
pub fn score_logits(logits: &LogitMap, cfg: &ScoreConfig) -> Result<(ClassMap, ScoreOutput)> {
    let pred = argmax_prediction(logits)?;
    let output = match cfg.method {
        ScoreMethod::Msp => ScoreOutput::Confidence(msp_confidence(logits)?),
        ScoreMethod::Energy => {
            let energy = energy_score(logits)?;
            if cfg.normalize_energy {
                ScoreOutput::Confidence(energy_to_confidence(&energy)?)
            } else {
                ScoreOutput::RawEnergy(energy)
            }
        }
    };
    Ok((pred, output))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        let logits = LogitMap::new(3, 1, 2, vec![1.0, 2.0, 1.0, 2.0, 0.5, 2.0]).unwrap();
        let pred = argmax_prediction(&logits).unwrap();
        // Pixel 0: logits (1, 1, 0.5) -> class 0; pixel 1: (2, 2, 2) -> class 0.
        assert_eq!(pred.data(), &[0, 0]);
    }

    #[test]
    fn argmax_rejects_single_class() {
        let logits = LogitMap::new(1, 1, 1, vec![1.0]).unwrap();
        assert!(argmax_prediction(&logits).is_err());
    }

    #[test]
    fn msp_frozen_example() {
        // Logits (ln 3, 0): softmax = (0.75, 0.25), MSP = 0.75.
        let logits = LogitMap::new(2, 1, 1, vec![(3f32).ln(), 0.0]).unwrap();
        let conf = msp_confidence(&logits).unwrap();
        assert!((conf.data()[0] - 0.75).abs() < 1e-6);
    }

    #[test]
    fn msp_shift_invariance() {
        let base = vec![0.3f32, -1.2, 2.5, 0.0, 1.0, -0.5];
        let shifted: Vec<f32> = base.iter().map(|&v| v + 7.0).collect();
        let a = msp_confidence(&LogitMap::new(3, 1, 2, base).unwrap()).unwrap();
        let b = msp_confidence(&LogitMap::new(3, 1, 2, shifted).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-7);
        }
    }

    #[test]
    fn energy_frozen_example() {
        // Logits (1, 2, 3): E = ln(e + e^2 + e^3).
        let logits = LogitMap::new(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let e = energy_score(&logits).unwrap();
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
        assert!((e.data()[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn energy_shift_identity() {
        // E(z + c) = E(z) + c.
        let base = vec![0.5f32, -1.5, 2.0, 0.25];
        let shifted: Vec<f32> = base.iter().map(|&v| v + 3.0).collect();
        let a = energy_score(&LogitMap::new(2, 1, 2, base).unwrap()).unwrap();
        let b = energy_score(&LogitMap::new(2, 1, 2, shifted).unwrap()).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((y - x - 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn energy_normalization_hits_unit_interval() {
        let e = ScalarMap::new(1, 3, vec![-2.0, 0.0, 6.0]).unwrap();
        let conf = energy_to_confidence(&e).unwrap();
        assert_eq!(conf.data()[0], 0.0);
        assert!((conf.data()[1] - 0.25).abs() < 1e-7);
        assert_eq!(conf.data()[2], 1.0);
    }

    #[test]
    fn constant_energy_becomes_half() {
        let e = ScalarMap::new(1, 3, vec![4.2, 4.2, 4.2]).unwrap();
        let conf = energy_to_confidence(&e).unwrap();
        assert_eq!(conf.data(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn score_logits_dispatches() {
        let logits = LogitMap::new(2, 1, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let (pred, out) = score_logits(&logits, &ScoreConfig::default()).unwrap();
        assert_eq!(pred.data(), &[0, 1]);
        assert!(matches!(out, ScoreOutput::Confidence(_)));
        let cfg = ScoreConfig { method: ScoreMethod::Energy, normalize_energy: false };
        let (_, out) = score_logits(&logits, &cfg).unwrap();
        assert!(matches!(out, ScoreOutput::RawEnergy(_)));
    }
}
