//! Post-hoc calibration: temperature scaling, polynomial temperature
//! scaling, and temperature scaling of mask-classification outputs.
//!
//! Fitting is deterministic: a 200-point log-spaced grid over `[0.05, 20]`
//! followed by golden-section refinement of the best bracket down to a width
//! of 1e-3. The polynomial variant runs coordinate descent over
//! `(tau1, tau2, tau3)` with that same 1-D procedure per coordinate, three
//! full sweeps, starting from the plain fitted temperature with the
//! quadratic and cubic terms disabled. Steps are accepted only when they
//! strictly lower the objective and keep the logit transform monotone
//! nondecreasing on the observed range, so the polynomial fit can never end
//! up worse than plain temperature scaling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{BinnedCalibration, DEFAULT_ECE_BINS};
use crate::tensor::{check_same_grid, ClassMap, ConfidenceMap, LogitMap, ProbabilityMap, IGNORE_ID};

pub const TAU_GRID_MIN: f64 = 0.05;
pub const TAU_GRID_MAX: f64 = 20.0;
pub const TAU_GRID_POINTS: usize = 200;
pub const TAU_REFINE_TOL: f64 = 1e-3;

/// Floor applied to probabilities inside the NLL objective.
const NLL_PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureParams {
    pub tau: f64,
}

impl TemperatureParams {
    pub fn new(tau: f64) -> Result<Self> {
        let params = TemperatureParams { tau };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::invalid(format!(
                "temperature must be finite and positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Polynomial temperature parameters. Disabled terms are explicit flags
/// rather than infinite taus; `enabled[i]` governs the degree-`i+1` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolyTemperatureParams {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub enabled: [bool; 3],
}

impl PolyTemperatureParams {
    pub fn linear(tau1: f64) -> Result<Self> {
        let params = PolyTemperatureParams { tau1, tau2: 1.0, tau3: 1.0, enabled: [true, false, false] };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        for (tau, on) in [self.tau1, self.tau2, self.tau3].iter().zip(self.enabled) {
            if on && (!tau.is_finite() || *tau == 0.0) {
                return Err(Error::invalid(format!(
                    "enabled polynomial temperatures must be finite and nonzero, got {tau}"
                )));
            }
        }
        Ok(())
    }

    /// The transformed logit for a normalized (nonnegative) logit `g`.
    pub fn transform(&self, g: f64) -> f64 {
        let mut z = 0.0;
        if self.enabled[0] {
            z += g / self.tau1;
        }
        if self.enabled[1] {
            let t = g / self.tau2;
            z += t * t;
        }
        if self.enabled[2] {
            let t = g / self.tau3;
            z += t * t * t;
        }
        z
    }

    /// Whether the transform is monotone nondecreasing on `[0, g_max]`.
    /// The derivative is a quadratic in `g`; its minimum over the interval
    /// is checked at both endpoints and the interior vertex.
    pub fn monotone_on(&self, g_max: f64) -> bool {
        let c0 = if self.enabled[0] { 1.0 / self.tau1 } else { 0.0 };
        let c1 = if self.enabled[1] { 2.0 / (self.tau2 * self.tau2) } else { 0.0 };
        let c2 = if self.enabled[2] {
            3.0 / (self.tau3 * self.tau3 * self.tau3)
        } else {
            0.0
        };
        let q = |g: f64| c0 + c1 * g + c2 * g * g;
        let mut min = q(0.0).min(q(g_max));
        if c2 != 0.0 {
            let vertex = -c1 / (2.0 * c2);
            if vertex > 0.0 && vertex < g_max {
                min = min.min(q(vertex));
            }
        }
        min >= -1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FitObjective {
    #[default]
    Ece,
    Nll,
}

fn softmax_into(z: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for &v in z {
        let e = (v - max).exp();
        denom += e;
        out.push(e);
    }
    for v in out.iter_mut() {
        *v /= denom;
    }
}

/// Per-pixel softmax of `logits / tau`.
pub fn apply_temperature(logits: &LogitMap, params: &TemperatureParams) -> Result<ProbabilityMap> {
    params.validate()?;
    let pixels = logits.pixel_count();
    let nc = logits.num_classes();
    let mut data = vec![0f32; nc * pixels];
    let mut scratch = Vec::with_capacity(nc);
    let mut z = Vec::with_capacity(nc);
    let mut probs = Vec::with_capacity(nc);
    for p in 0..pixels {
        logits.pixel_logits(p, &mut scratch);
        z.clear();
        z.extend(scratch.iter().map(|&v| v / params.tau));
        softmax_into(&z, &mut probs);
        for (c, &v) in probs.iter().enumerate() {
            data[c * pixels + p] = v as f32;
        }
    }
    ProbabilityMap::new(nc, logits.height(), logits.width(), data)
}

/// Subtracts each pixel's minimum logit, leaving a nonnegative map with a
/// per-pixel minimum of exactly zero. Idempotent.
pub fn normalize_logits(logits: &LogitMap) -> LogitMap {
    let pixels = logits.pixel_count();
    let nc = logits.num_classes();
    let mut data = vec![0f32; nc * pixels];
    for p in 0..pixels {
        let mut min = f32::INFINITY;
        for c in 0..nc {
            min = min.min(logits.at(c, p));
        }
        for c in 0..nc {
            data[c * pixels + p] = logits.at(c, p) - min;
        }
    }
    LogitMap::new(nc, logits.height(), logits.width(), data)
        .expect("normalization preserves finiteness")
}

/// Per-pixel softmax of the polynomial transform of the normalized logits.
/// Rejects parameter sets whose transform is not monotone nondecreasing on
/// the observed logit range.
pub fn apply_poly_temperature(
    logits: &LogitMap,
    params: &PolyTemperatureParams,
) -> Result<ProbabilityMap> {
    params.validate()?;
    let normalized = normalize_logits(logits);
    let g_max = normalized
        .data()
        .iter()
        .cloned()
        .fold(0f32, f32::max) as f64;
    if !params.monotone_on(g_max) {
        return Err(Error::invalid(format!(
            "polynomial transform is not monotone on the observed logit range [0, {g_max}]"
        )));
    }
    let pixels = normalized.pixel_count();
    let nc = normalized.num_classes();
    let mut data = vec![0f32; nc * pixels];
    let mut scratch = Vec::with_capacity(nc);
    let mut z = Vec::with_capacity(nc);
    let mut probs = Vec::with_capacity(nc);
    for p in 0..pixels {
        normalized.pixel_logits(p, &mut scratch);
        z.clear();
        z.extend(scratch.iter().map(|&g| params.transform(g)));
        softmax_into(&z, &mut probs);
        for (c, &v) in probs.iter().enumerate() {
            data[c * pixels + p] = v as f32;
        }
    }
    ProbabilityMap::new(nc, logits.height(), logits.width(), data)
}

/// Flattened evaluable pixels of a validation set: raw and normalized
/// logits plus the true class per pixel.
struct CalibSamples {
    raw: Vec<f64>,
    normalized: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    g_max: f64,
}

impl CalibSamples {
    fn len(&self) -> usize {
        self.labels.len()
    }
}

fn collect_samples(val_logits: &[LogitMap], val_gt: &[ClassMap]) -> Result<CalibSamples> {
    if val_logits.is_empty() || val_logits.len() != val_gt.len() {
        return Err(Error::invalid(format!(
            "validation needs matching logit and ground-truth lists, got {} and {}",
            val_logits.len(),
            val_gt.len()
        )));
    }
    let num_classes = val_logits[0].num_classes();
    if num_classes < 2 {
        return Err(Error::invalid("calibration needs at least two classes"));
    }
    let mut raw = Vec::new();
    let mut normalized = Vec::new();
    let mut labels = Vec::new();
    let mut g_max = 0f64;
    let mut scratch = Vec::with_capacity(num_classes);
    for (logits, gt) in val_logits.iter().zip(val_gt) {
        if logits.num_classes() != num_classes {
            return Err(Error::shape(format!(
                "mixed class counts in validation logits: {} vs {num_classes}",
                logits.num_classes()
            )));
        }
        check_same_grid(
            (logits.height(), logits.width()),
            (gt.height(), gt.width()),
            "validation logits vs ground truth",
        )?;
        for (p, &g) in gt.data().iter().enumerate() {
            if g == IGNORE_ID {
                continue;
            }
            if g as usize >= num_classes {
                return Err(Error::invalid(format!(
                    "ground truth id {g} out of range for {num_classes} classes"
                )));
            }
            logits.pixel_logits(p, &mut scratch);
            let min = scratch.iter().cloned().fold(f64::INFINITY, f64::min);
            for &v in &scratch {
                raw.push(v);
                normalized.push(v - min);
                g_max = g_max.max(v - min);
            }
            labels.push(g as usize);
        }
    }
    if labels.is_empty() {
        return Err(Error::invalid("no evaluable pixels in the validation set"));
    }
    Ok(CalibSamples { raw, normalized, labels, num_classes, g_max })
}

/// Objective over the samples for a given per-class logit transform. The
/// transform maps a class's input value to the calibrated logit.
fn objective_value(
    samples: &CalibSamples,
    use_normalized: bool,
    objective: FitObjective,
    transform: impl Fn(f64) -> f64,
) -> f64 {
    let nc = samples.num_classes;
    let source = if use_normalized { &samples.normalized } else { &samples.raw };
    let mut z = vec![0f64; nc];
    let mut probs = Vec::with_capacity(nc);
    let mut bins = BinnedCalibration::zeros(DEFAULT_ECE_BINS).expect("default bin count");
    let mut nll_sum = 0f64;
    for (i, &label) in samples.labels.iter().enumerate() {
        let row = &source[i * nc..(i + 1) * nc];
        for (c, &g) in row.iter().enumerate() {
            z[c] = transform(g);
        }
        softmax_into(&z, &mut probs);
        match objective {
            FitObjective::Ece => {
                let mut best = 0usize;
                for c in 1..nc {
                    if probs[c] > probs[best] {
                        best = c;
                    }
                }
                bins.observe(probs[best], best == label);
            }
            FitObjective::Nll => {
                nll_sum -= probs[label].max(NLL_PROB_FLOOR).ln();
            }
        }
    }
    match objective {
        FitObjective::Ece => bins.ece().expect("samples are non-empty"),
        FitObjective::Nll => nll_sum / samples.len() as f64,
    }
}

fn tau_grid() -> Vec<f64> {
    let ratio = TAU_GRID_MAX / TAU_GRID_MIN;
    (0..TAU_GRID_POINTS)
        .map(|k| TAU_GRID_MIN * ratio.powf(k as f64 / (TAU_GRID_POINTS - 1) as f64))
        .collect()
}

/// Minimizes `f` over the log-spaced tau grid, then golden-section refines
/// the winning bracket. Candidates may return infinity to signal rejection.
fn fit_1d(mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let grid = tau_grid();
    let mut best_k = 0usize;
    let mut best_v = f64::INFINITY;
    for (k, &tau) in grid.iter().enumerate() {
        let v = f(tau);
        if v < best_v {
            best_v = v;
            best_k = k;
        }
    }
    let mut best = (grid[best_k], best_v);
    let mut a = grid[best_k.saturating_sub(1)];
    let mut b = grid[(best_k + 1).min(grid.len() - 1)];
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > TAU_REFINE_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        let (tau, v) = if fc <= fd { (c, fc) } else { (d, fd) };
        if v < best.1 {
            best = (tau, v);
        }
    }
    best
}

/// Fits a single temperature to the validation set by minimizing the
/// objective over the deterministic grid-plus-refinement search.
pub fn fit_temperature(
    val_logits: &[LogitMap],
    val_gt: &[ClassMap],
    objective: FitObjective,
) -> Result<TemperatureParams> {
    let samples = collect_samples(val_logits, val_gt)?;
    let (tau, _) = fit_tau_on(&samples, objective);
    TemperatureParams::new(tau)
}

fn fit_tau_on(samples: &CalibSamples, objective: FitObjective) -> (f64, f64) {
    fit_1d(|tau| objective_value(samples, false, objective, |g| g / tau))
}

/// Fits the polynomial temperature parameters by coordinate descent: three
/// sweeps over (tau1, tau2, tau3), each coordinate searched with the same
/// grid-plus-refinement procedure as plain temperature fitting. The start
/// point is the plain fitted temperature with the higher-order terms
/// disabled, and a step is accepted only when it strictly improves the
/// objective while keeping the transform monotone on the observed range,
/// so the result is never worse than plain temperature scaling.
pub fn fit_poly_temperature(
    val_logits: &[LogitMap],
    val_gt: &[ClassMap],
    objective: FitObjective,
) -> Result<PolyTemperatureParams> {
    let samples = collect_samples(val_logits, val_gt)?;
    let (tau1, _) = fit_tau_on(&samples, objective);
    let mut params = PolyTemperatureParams::linear(tau1)?;
    let pts_objective = |p: &PolyTemperatureParams| {
        if !p.monotone_on(samples.g_max) {
            return f64::INFINITY;
        }
        objective_value(&samples, true, objective, |g| p.transform(g))
    };
    let mut best = pts_objective(&params);
    for _sweep in 0..3 {
        for coord in 0..3 {
            let with_value = |tau: f64| {
                let mut p = params;
                p.enabled[coord] = true;
                match coord {
                    0 => p.tau1 = tau,
                    1 => p.tau2 = tau,
                    2 => p.tau3 = tau,
                    _ => unreachable!(),
                }
                p
            };
            let (tau, value) = fit_1d(|tau| pts_objective(&with_value(tau)));
            let mut candidate = (with_value(tau), value);
            if coord > 0 {
                let mut off = params;
                off.enabled[coord] = false;
                let off_value = pts_objective(&off);
                if off_value < candidate.1 {
                    candidate = (off, off_value);
                }
            }
            if candidate.1 < best {
                params = candidate.0;
                best = candidate.1;
            }
        }
    }
    params.validate()?;
    Ok(params)
}

/// Mask-classification output: per-query class scores and per-query mask
/// logits over the pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskFormerOutput {
    num_queries: usize,
    num_classes: usize,
    height: usize,
    width: usize,
    class_scores: Vec<f32>,
    mask_logits: Vec<f32>,
}

impl MaskFormerOutput {
    pub fn new(
        num_queries: usize,
        num_classes: usize,
        height: usize,
        width: usize,
        class_scores: Vec<f32>,
        mask_logits: Vec<f32>,
    ) -> Result<Self> {
        if num_queries == 0 {
            return Err(Error::invalid("mask output needs at least one query"));
        }
        if num_classes < 2 || num_classes > 255 {
            return Err(Error::invalid(format!(
                "mask output num_classes must be in 2..=255, got {num_classes}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask output dimensions must be nonzero"));
        }
        if class_scores.len() != num_queries * num_classes {
            return Err(Error::shape(format!(
                "class scores: expected {} values, got {}",
                num_queries * num_classes,
                class_scores.len()
            )));
        }
        if mask_logits.len() != num_queries * height * width {
            return Err(Error::shape(format!(
                "mask logits: expected {} values, got {}",
                num_queries * height * width,
                mask_logits.len()
            )));
        }
        if class_scores.iter().chain(&mask_logits).any(|v| !v.is_finite()) {
            return Err(Error::invalid("mask output entries must be finite"));
        }
        Ok(MaskFormerOutput { num_queries, num_classes, height, width, class_scores, mask_logits })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }
}

/// Collapses a mask-classification output to a semantic prediction with a
/// temperature applied to the class scores: each query's class row is
/// softmaxed (over classes) after division by tau, weighted by the query's
/// sigmoid mask, and summed over queries. The per-pixel confidence is the
/// maximum class score; with overlapping queries the sum can exceed one,
/// in which case it saturates at 1.0.
pub fn maskformer_output(
    out: &MaskFormerOutput,
    t: &TemperatureParams,
) -> Result<(ClassMap, ConfidenceMap)> {
    t.validate()?;
    let (n, nc) = (out.num_queries, out.num_classes);
    let pixels = out.height * out.width;
    let mut weights = vec![0f64; n * nc];
    let mut z = Vec::with_capacity(nc);
    let mut probs = Vec::with_capacity(nc);
    for q in 0..n {
        z.clear();
        z.extend(
            out.class_scores[q * nc..(q + 1) * nc]
                .iter()
                .map(|&v| v as f64 / t.tau),
        );
        softmax_into(&z, &mut probs);
        weights[q * nc..(q + 1) * nc].copy_from_slice(&probs);
    }
    let mut pred = vec![0u8; pixels];
    let mut conf = vec![0f32; pixels];
    let mut scores = vec![0f64; nc];
    for p in 0..pixels {
        scores.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..n {
            let m = out.mask_logits[q * pixels + p] as f64;
            let sig = 1.0 / (1.0 + (-m).exp());
            for c in 0..nc {
                scores[c] += weights[q * nc + c] * sig;
            }
        }
        let mut best = 0usize;
        for c in 1..nc {
            if scores[c] > scores[best] {
                best = c;
            }
        }
        pred[p] = best as u8;
        conf[p] = scores[best].min(1.0) as f32;
    }
    let pred = ClassMap::new(out.height, out.width, nc, pred)?;
    let conf = ConfidenceMap::new(out.height, out.width, conf)?;
    Ok((pred, conf))
}
