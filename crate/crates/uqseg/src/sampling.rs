//! Training-support utilities: class-biased sampling plans, pseudo-label
//! confidence filtering, and exponential moving averages of parameters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_same_grid, BinaryMask, ClassMap, ConfidenceMap, IGNORE_ID};

/// Relative frequency of each class in a dataset, each in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassFrequencies {
    frequencies: Vec<f64>,
}

impl ClassFrequencies {
    pub fn new(frequencies: Vec<f64>) -> Result<Self> {
        if frequencies.is_empty() {
            return Err(Error::invalid("class frequencies must not be empty"));
        }
        for (i, &f) in frequencies.iter().enumerate() {
            if !f.is_finite() || !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!(
                    "frequency {f} for class {i} must be in [0, 1]"
                )));
            }
        }
        Ok(ClassFrequencies { frequencies })
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.frequencies
    }

    /// Softmax over `1 - f`, so rarer classes weigh more.
    pub fn rarity_softmax(&self) -> Vec<f64> {
        let max = self
            .frequencies
            .iter()
            .map(|f| 1.0 - f)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = self.frequencies.iter().map(|f| (1.0 - f - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / sum).collect()
    }
}

/// A flat vector of network parameters, finite throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f32>,
}

impl ParamVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("parameter vector must not be empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameter vector must be finite"));
        }
        Ok(ParamVector { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }
}

/// Per-class probability that a crop with the given dominant class enters
/// the training set of a model biased toward `biased_class`. The biased
/// class is taken with probability `0.5 + 0.5 * p_soft`, every other class
/// with `0.5 * p_soft`, where `p_soft` is the rarity softmax.
pub fn sampling_probability(
    frequencies: &ClassFrequencies,
    biased_class: usize,
) -> Result<Vec<f64>> {
    if biased_class >= frequencies.len() {
        return Err(Error::invalid(format!(
            "biased class {biased_class} out of range for {} classes",
            frequencies.len()
        )));
    }
    let soft = frequencies.rarity_softmax();
    Ok(soft
        .iter()
        .enumerate()
        .map(|(c, &p)| if c == biased_class { 0.5 + 0.5 * p } else { 0.5 * p })
        .collect())
}

/// One inclusion draw matching [`sampling_probability`]: a fair coin picks
/// between "include exactly the biased class" and "include with the rarity
/// softmax probability of the label".
pub fn sample_inclusion(
    label: usize,
    frequencies: &ClassFrequencies,
    biased_class: usize,
    rng: &mut impl Rng,
) -> Result<bool> {
    if label >= frequencies.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            frequencies.len()
        )));
    }
    if biased_class >= frequencies.len() {
        return Err(Error::invalid(format!(
            "biased class {biased_class} out of range for {} classes",
            frequencies.len()
        )));
    }
    let soft = frequencies.rarity_softmax();
    if rng.random_bool(0.5) {
        Ok(label == biased_class)
    } else {
        Ok(rng.random::<f64>() < soft[label])
    }
}

/// Masks low-confidence pixels of the classes whose confidence spreads
/// widest. Per predicted class the population standard deviation of the
/// confidences is taken; within the `top_k` classes by spread (ties toward
/// the lower class id), pixels strictly below their class mean are masked.
pub fn confidence_filter(
    conf: &ConfidenceMap,
    pred: &ClassMap,
    top_k: usize,
) -> Result<BinaryMask> {
    check_same_grid(
        (conf.height(), conf.width()),
        (pred.height(), pred.width()),
        "confidence and prediction",
    )?;
    struct ClassStats {
        id: u8,
        count: usize,
        sum: f64,
        sum_sq: f64,
    }
    let mut stats: Vec<ClassStats> = Vec::new();
    for (&c, &id) in conf.data().iter().zip(pred.data()) {
        if id == IGNORE_ID {
            continue;
        }
        let v = c as f64;
        match stats.iter_mut().find(|s| s.id == id) {
            Some(s) => {
                s.count += 1;
                s.sum += v;
                s.sum_sq += v * v;
            }
            None => stats.push(ClassStats { id, count: 1, sum: v, sum_sq: v * v }),
        }
    }
    let mut spread: Vec<(u8, f64, f64)> = stats
        .iter()
        .map(|s| {
            let mean = s.sum / s.count as f64;
            let var = (s.sum_sq / s.count as f64 - mean * mean).max(0.0);
            (s.id, var.sqrt(), mean)
        })
        .collect();
    spread.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite spread").then(a.0.cmp(&b.0)));
    spread.truncate(top_k);

    let mut mask = vec![false; conf.data().len()];
    for (p, (&c, &id)) in conf.data().iter().zip(pred.data()).enumerate() {
        if let Some(&(_, _, mean)) = spread.iter().find(|&&(sid, _, _)| sid == id) {
            if (c as f64) < mean {
                mask[p] = true;
            }
        }
    }
    BinaryMask::new(conf.height(), conf.width(), mask)
}

/// Exponential moving average `decay * teacher + (1 - decay) * student`.
pub fn ema_update(
    teacher: &ParamVector,
    student: &ParamVector,
    decay: f64,
) -> Result<ParamVector> {
    if !decay.is_finite() || !(0.0..=1.0).contains(&decay) {
        return Err(Error::invalid(format!("decay must be in [0, 1], got {decay}")));
    }
    if teacher.len() != student.len() {
        return Err(Error::shape(format!(
            "teacher has {} parameters, student {}",
            teacher.len(),
            student.len()
        )));
    }
    let values: Vec<f32> = teacher
        .values
        .iter()
        .zip(&student.values)
        .map(|(&t, &s)| (decay * t as f64 + (1.0 - decay) * s as f64) as f32)
        .collect();
    ParamVector::new(values)
}
