//! Acceptance suite: one test per release criterion, each printing a
//! single PASS line on success. Ranking metrics are checked against
//! independent brute-force oracles written here, not against the
//! library's own implementations.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use uqseg::adapt::{gaussian_kl, mix_stats, mixing_coefficient, FeatureStats, LayerStats};
use uqseg::augment::{
    augment_night, augment_rain, augment_snow, geometric, GeometricOp, NightConfig, RainConfig,
    SnowConfig,
};
use uqseg::calibration::{
    apply_poly_temperature, apply_temperature, fit_poly_temperature, fit_temperature,
    FitObjective,
};
use uqseg::cli::{EvalArgs, Recipe};
use uqseg::evaluate::{
    Aggregation, REFERENCE_BASELINE, REFERENCE_DROPOUT_ENSEMBLE_PTS,
    REFERENCE_DROPOUT_ENSEMBLE_TS,
};
use uqseg::fusion::{
    bias_disagreement_ood, majority_vote, reciprocal_fuse, region_normalize, RegionNormConfig,
    VoteConfig,
};
use uqseg::losses::{ce_gradient, focal_loss, ohem_select, pixel_ce, true_class_prob,
    FocalConfig, LossMap, OhemConfig};
use uqseg::metrics::{auroc, aupr, fpr_at_95_tpr, DEFAULT_ECE_BINS};
use uqseg::scoring::{argmax_prediction, energy_score, msp_confidence};
use uqseg::tensor::{ClassMap, ConfidenceMap, ImageTensor, LogitMap, IGNORE_ID};

// ---------------------------------------------------------------------
// Independent oracles.

/// AUROC as the explicit pairwise win rate (ties worth half a win).
fn oracle_auroc(samples: &[(f64, bool)]) -> Option<f64> {
    let pos: Vec<f64> = samples.iter().filter(|(_, p)| *p).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = samples.iter().filter(|(_, p)| !*p).map(|(s, _)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() as f64 * neg.len() as f64))
}

fn distinct_scores_descending(samples: &[(f64, bool)]) -> Vec<f64> {
    let mut scores: Vec<f64> = samples.iter().map(|(s, _)| *s).collect();
    scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
    scores.dedup();
    scores
}

/// Counts of flagged positives and negatives at `score >= threshold`.
fn counts_at(samples: &[(f64, bool)], threshold: f64) -> (u64, u64) {
    let mut tp = 0;
    let mut fp = 0;
    for &(s, p) in samples {
        if s >= threshold {
            if p {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    (tp, fp)
}

/// Average precision by sweeping every distinct threshold and counting
/// from scratch at each one.
fn oracle_aupr(samples: &[(f64, bool)]) -> Option<f64> {
    let n_pos = samples.iter().filter(|(_, p)| *p).count() as u64;
    if n_pos == 0 {
        return None;
    }
    let mut ap = 0f64;
    let mut prev_tp = 0u64;
    for t in distinct_scores_descending(samples) {
        let (tp, fp) = counts_at(samples, t);
        if tp > prev_tp {
            let precision = tp as f64 / (tp + fp) as f64;
            ap += precision * ((tp - prev_tp) as f64 / n_pos as f64);
        }
        prev_tp = tp;
    }
    Some(ap)
}

/// False positive rate at the largest threshold reaching 95% recall,
/// found by trying every distinct threshold from the top.
fn oracle_fpr_at_95(samples: &[(f64, bool)]) -> Option<f64> {
    let n_pos = samples.iter().filter(|(_, p)| *p).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    for t in distinct_scores_descending(samples) {
        let (tp, fp) = counts_at(samples, t);
        if tp as f64 / n_pos as f64 >= 0.95 {
            return Some(fp as f64 / n_neg as f64);
        }
    }
    unreachable!("the smallest threshold flags every sample");
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

// ---------------------------------------------------------------------
// Criteria.

#[test]
fn criterion_01_ranking_metrics_match_brute_force_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..200 {
        // Mostly small instances, with every tenth large; every eighth
        // uses a coarse score grid so tie handling is exercised hard.
        let n = if case % 10 == 0 {
            rng.random_range(2_000..=10_000)
        } else {
            rng.random_range(2..=300)
        };
        let levels = match case % 8 {
            0 => Some(2u32),
            1 => Some(7),
            2 => Some(40),
            _ => None,
        };
        let single_class = case % 17 == 0;
        let samples: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let raw: f64 = rng.random();
                let score = match levels {
                    Some(k) => (raw * k as f64).floor() / k as f64,
                    None => raw,
                };
                let label = if single_class { true } else { rng.random_bool(0.4) };
                (score, label)
            })
            .collect();
        let lib_auroc = auroc(&samples).unwrap();
        let lib_aupr = aupr(&samples).unwrap();
        let lib_fpr = fpr_at_95_tpr(&samples).unwrap();
        assert!(
            close(lib_auroc, oracle_auroc(&samples), 1e-12),
            "AUROC mismatch on case {case}: {lib_auroc:?} vs {:?}",
            oracle_auroc(&samples)
        );
        assert!(
            close(lib_aupr, oracle_aupr(&samples), 1e-12),
            "AUPR mismatch on case {case}: {lib_aupr:?} vs {:?}",
            oracle_aupr(&samples)
        );
        assert_eq!(lib_fpr, oracle_fpr_at_95(&samples), "FPR mismatch on case {case}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 30.0, "took {elapsed:?}, budget 30 s");
    println!(
        "criterion 1 PASS: AUROC/AUPR within 1e-12 of pairwise and sweep oracles, \
         FPR@95 exact, on 200 randomized instances in {elapsed:?}"
    );
}

#[test]
fn criterion_02_auroc_matches_closed_form_on_gaussians() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let inliers = Normal::new(0.0f64, 1.0).unwrap();
    let anomalies = Normal::new(1.0f64, 1.0).unwrap();
    let n = 100_000;
    let mut samples = Vec::with_capacity(2 * n);
    for _ in 0..n {
        samples.push((inliers.sample(&mut rng), false));
        samples.push((anomalies.sample(&mut rng), true));
    }
    let got = auroc(&samples).unwrap().unwrap();
    // For two unit-variance Gaussians one apart, the true AUROC is the
    // standard normal CDF at 1/sqrt(2).
    let expected = 0.7602499389065233;
    assert!(
        (got - expected).abs() < 0.01,
        "AUROC {got} is not within 0.01 of {expected}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!(
        "criterion 2 PASS: AUROC {got:.4} within 0.01 of the closed form {expected:.4} \
         on 2x100000 Gaussian scores in {elapsed:?}"
    );
}

/// Labels drawn so that accuracy matches the softmax confidence of the
/// unscaled logits, making them calibrated before the five-fold scaling.
fn overconfident_set(seed: u64, side: usize, classes: usize) -> (LogitMap, ClassMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = side * side;
    let mut logits = vec![0f32; classes * pixels];
    let mut labels = vec![0u8; pixels];
    for p in 0..pixels {
        let true_class = rng.random_range(0..classes);
        let margin: f64 = rng.random_range(0.2..1.5);
        logits[true_class * pixels + p] = (5.0 * margin) as f32;
        let p_correct = margin.exp() / (margin.exp() + (classes - 1) as f64);
        labels[p] = if rng.random::<f64>() < p_correct {
            true_class as u8
        } else {
            ((true_class + 1 + rng.random_range(0..classes - 1)) % classes) as u8
        };
    }
    (
        LogitMap::new(classes, side, side, logits).unwrap(),
        ClassMap::new(side, side, classes, labels).unwrap(),
    )
}

/// Calibration error of an externally supplied probability map.
fn ece_of_probs(probs: &uqseg::tensor::ProbabilityMap, gt: &ClassMap) -> f64 {
    let mut bins = uqseg::metrics::BinnedCalibration::zeros(DEFAULT_ECE_BINS).unwrap();
    let pixels = probs.pixel_count();
    for p in 0..pixels {
        let (mut best, mut best_v) = (0usize, f32::NEG_INFINITY);
        for c in 0..probs.num_classes() {
            if probs.at(c, p) > best_v {
                best_v = probs.at(c, p);
                best = c;
            }
        }
        bins.observe(best_v as f64, best as u8 == gt.data()[p]);
    }
    bins.ece().unwrap()
}

/// Calibration error with the softmax taken in f64 on min-shifted logits,
/// the same arithmetic the fitting objective uses, so fitted parameters
/// can be compared against each other without f32 rounding in between.
fn ece_f64(logits: &LogitMap, gt: &ClassMap, transform: impl Fn(f64) -> f64) -> f64 {
    let mut bins = uqseg::metrics::BinnedCalibration::zeros(DEFAULT_ECE_BINS).unwrap();
    let mut scratch = Vec::new();
    for (p, &label) in gt.data().iter().enumerate() {
        logits.pixel_logits(p, &mut scratch);
        let min = scratch.iter().cloned().fold(f64::INFINITY, f64::min);
        let z: Vec<f64> = scratch.iter().map(|&g| transform(g - min)).collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let (mut best, mut best_v) = (0usize, f64::NEG_INFINITY);
        for (c, &e) in exps.iter().enumerate() {
            let pr = e / denom;
            if pr > best_v {
                best_v = pr;
                best = c;
            }
        }
        bins.observe(best_v, best as u8 == label);
    }
    bins.ece().unwrap()
}

#[test]
fn criterion_03_temperature_fit_recovers_scale_and_cuts_ece() {
    let (logits, gt) = overconfident_set(303, 128, 6);
    let logits_slice = std::slice::from_ref(&logits);
    let gt_slice = std::slice::from_ref(&gt);

    let ts = fit_temperature(logits_slice, gt_slice, FitObjective::Ece).unwrap();
    assert!(
        (4.0..=6.0).contains(&ts.tau),
        "expected a temperature near 5, got {}",
        ts.tau
    );

    let before = ece_f64(&logits, &gt, |g| g);
    let after = ece_f64(&logits, &gt, |g| g / ts.tau);
    assert!(
        after <= 0.2 * before,
        "ECE reduction below 80%: before {before}, after {after}"
    );

    let pts = fit_poly_temperature(logits_slice, gt_slice, FitObjective::Ece).unwrap();
    let pts_ece = ece_f64(&logits, &gt, |g| pts.transform(g));
    assert!(
        pts_ece <= after + 1e-9,
        "polynomial fit lost to the plain fit: {pts_ece} vs {after}"
    );

    // The public application functions agree with the fit-time arithmetic
    // up to f32 storage of the probabilities.
    let applied = ece_of_probs(&apply_temperature(&logits, &ts).unwrap(), &gt);
    assert!((applied - after).abs() < 5e-4, "apply path drifted: {applied} vs {after}");
    let applied_pts = ece_of_probs(&apply_poly_temperature(&logits, &pts).unwrap(), &gt);
    assert!(
        (applied_pts - pts_ece).abs() < 5e-4,
        "polynomial apply path drifted: {applied_pts} vs {pts_ece}"
    );
    println!(
        "criterion 3 PASS: recovered temperature {:.3} in [4, 6], ECE {before:.4} -> \
         {after:.4} (>= 80% reduction), polynomial ECE {pts_ece:.4} <= plain + 1e-9",
        ts.tau
    );
}

#[test]
fn criterion_04_scoring_identities_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut max_energy_err = 0f64;
    let mut max_msp_err = 0f64;
    for _ in 0..100 {
        let (nc, h, w) = (rng.random_range(2..=12), rng.random_range(1..=16), rng.random_range(1..=16));
        let data: Vec<f32> = (0..nc * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let logits = LogitMap::new(nc, h, w, data.clone()).unwrap();
        let shift = [-1.0f32, -0.5, -0.25, 0.25, 0.5, 1.0][rng.random_range(0..6)];
        let shifted = LogitMap::new(
            nc,
            h,
            w,
            data.iter().map(|&v| v + shift).collect(),
        )
        .unwrap();

        let e1 = energy_score(&logits).unwrap();
        let e2 = energy_score(&shifted).unwrap();
        for (a, b) in e1.data().iter().zip(e2.data()) {
            max_energy_err = max_energy_err.max((b - a - shift as f64).abs());
        }

        let m1 = msp_confidence(&logits).unwrap();
        let m2 = msp_confidence(&shifted).unwrap();
        for (a, b) in m1.data().iter().zip(m2.data()) {
            max_msp_err = max_msp_err.max((*b as f64 - *a as f64).abs());
        }

        // Dividing by a temperature must not change the argmax.
        let tau: f64 = rng.random_range(0.05..20.0);
        let scaled = LogitMap::new(
            nc,
            h,
            w,
            data.iter().map(|&v| (v as f64 / tau) as f32).collect(),
        )
        .unwrap();
        assert_eq!(
            argmax_prediction(&logits).unwrap().data(),
            argmax_prediction(&scaled).unwrap().data(),
            "argmax changed under temperature {tau}"
        );
    }
    assert!(max_energy_err < 1e-6, "energy shift identity off by {max_energy_err}");
    assert!(max_msp_err < 1e-7, "softmax shift invariance off by {max_msp_err}");
    println!(
        "criterion 4 PASS: energy shift identity within 1e-6 (worst {max_energy_err:.2e}), \
         softmax shift-invariant within 1e-7 (worst {max_msp_err:.2e}), argmax \
         temperature-invariant on 100 random pairs"
    );
}

#[test]
fn criterion_05_stat_adaptation_properties() {
    // Non-negativity of the divergence on a 10x10x10x10 parameter grid.
    let grid: Vec<f64> = (0..10).map(|k| 0.5 + 0.45 * k as f64).collect();
    let mut checked = 0usize;
    for &mu1 in &grid {
        for &sigma1 in &grid {
            for &mu2 in &grid {
                for &sigma2 in &grid {
                    let kl = gaussian_kl(mu1 - 2.5, sigma1, mu2 - 2.5, sigma2).unwrap();
                    assert!(
                        kl >= 0.0,
                        "negative divergence {kl} at ({mu1},{sigma1},{mu2},{sigma2})"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 10_000);

    // Blending at the endpoints returns the inputs bit for bit.
    let running = FeatureStats::new(vec![
        LayerStats::new("a", vec![0.1, -0.7], vec![1.3, 0.4]).unwrap(),
        LayerStats::new("b", vec![2.0], vec![0.09]).unwrap(),
    ])
    .unwrap();
    let instance = FeatureStats::new(vec![
        LayerStats::new("a", vec![-1.0, 0.33], vec![0.8, 2.2]).unwrap(),
        LayerStats::new("b", vec![-0.25], vec![1.7]).unwrap(),
    ])
    .unwrap();
    let zero = uqseg::adapt::MixingCoefficient::new(0.0).unwrap();
    let one = uqseg::adapt::MixingCoefficient::new(1.0).unwrap();
    assert_eq!(mix_stats(&running, &instance, &zero).unwrap(), running);
    assert_eq!(mix_stats(&running, &instance, &one).unwrap(), instance);

    // Identical statistics mean zero divergence and an exactly balanced
    // blend.
    let alpha = mixing_coefficient(&running, &running).unwrap();
    assert_eq!(alpha.alpha, 0.5);
    println!(
        "criterion 5 PASS: divergence nonnegative on a 10^4 grid, endpoint blends exact, \
         balanced coefficient exactly 0.5 at zero divergence"
    );
}

#[test]
fn criterion_06_fusion_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);

    // Region flattening with a unit kernel is idempotent.
    let config = RegionNormConfig { mean_filter_kernel: 1, ..RegionNormConfig::default() };
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=20), rng.random_range(1..=20));
        let data: Vec<f32> = (0..h * w).map(|_| rng.random::<f32>()).collect();
        let conf = ConfidenceMap::new(h, w, data).unwrap();
        let once = region_normalize(&conf, &config).unwrap();
        let twice = region_normalize(&once, &config).unwrap();
        assert_eq!(once.data(), twice.data(), "not idempotent on a {h}x{w} map");
    }

    // Reciprocal fusion is pessimistic pointwise.
    for _ in 0..100 {
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let a = ConfidenceMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
        let b = ConfidenceMap::new(h, w, (0..h * w).map(|_| rng.random()).collect()).unwrap();
        let fused = reciprocal_fuse(&a, &b).unwrap();
        for ((&f, &x), &y) in fused.data().iter().zip(a.data()).zip(b.data()) {
            assert!(f <= x.min(y) + f32::EPSILON, "{f} above min({x}, {y})");
        }
    }

    // Voting is invariant under reordering the models, as long as the
    // preferred model follows its map to the new position.
    let maps: Vec<ClassMap> = (0..5)
        .map(|_| {
            ClassMap::new(6, 6, 4, (0..36).map(|_| rng.random_range(0..4)).collect()).unwrap()
        })
        .collect();
    let baseline = majority_vote(&maps, &VoteConfig { preferred_model: 2 }).unwrap();
    let mut order: Vec<usize> = (0..maps.len()).collect();
    for _ in 0..20 {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let permuted: Vec<ClassMap> = order.iter().map(|&i| maps[i].clone()).collect();
        let preferred = order.iter().position(|&i| i == 2).unwrap();
        let voted = majority_vote(&permuted, &VoteConfig { preferred_model: preferred }).unwrap();
        assert_eq!(voted.data(), baseline.data(), "vote changed under permutation");
    }

    // Disagreement flags exactly the both-biased pixels.
    let pred_a = ClassMap::new(1, 4, 6, vec![5, 5, 1, 1]).unwrap();
    let pred_b = ClassMap::new(1, 4, 6, vec![3, 1, 3, 1]).unwrap();
    let mask = bias_disagreement_ood(&pred_a, &pred_b, 5, 3).unwrap();
    assert_eq!(mask.data(), &[true, false, false, false]);
    println!(
        "criterion 6 PASS: unit-kernel region flattening idempotent on 100 maps, reciprocal \
         fusion pessimistic, voting permutation-invariant, disagreement truth table exact"
    );
}

#[test]
fn criterion_07_loss_properties() {
    // Analytic gradient against central differences with an f32-exact
    // step measurement.
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (nc, h, w) = (8, 4, 4);
    let pixels = h * w;
    let data: Vec<f32> = (0..nc * pixels).map(|_| rng.random_range(-3.0..3.0)).collect();
    let gt_data: Vec<u8> = (0..pixels)
        .map(|p| if p == 3 { IGNORE_ID } else { rng.random_range(0..nc as u8) })
        .collect();
    let logits = LogitMap::new(nc, h, w, data.clone()).unwrap();
    let gt = ClassMap::new(h, w, nc, gt_data).unwrap();
    let grad = ce_gradient(&logits, &gt, IGNORE_ID).unwrap();
    let mean_loss = |values: &[f32]| -> f64 {
        let l = LogitMap::new(nc, h, w, values.to_vec()).unwrap();
        pixel_ce(&l, &gt, IGNORE_ID).unwrap().mean().unwrap()
    };
    let step = 1e-5f64;
    let mut max_err = 0f64;
    for i in 0..data.len() {
        let mut plus = data.clone();
        let mut minus = data.clone();
        plus[i] = (data[i] as f64 + step) as f32;
        minus[i] = (data[i] as f64 - step) as f32;
        let actual_step = plus[i] as f64 - minus[i] as f64;
        let numeric = (mean_loss(&plus) - mean_loss(&minus)) / actual_step;
        max_err = max_err.max((numeric - grad[i]).abs());
    }
    assert!(max_err < 1e-4, "gradient check failed with max error {max_err}");

    // Hand-worked mining cases.
    let losses = LossMap::new(1, 4, vec![3.0, 2.0, 1.0, 0.5], vec![true; 4]).unwrap();
    let config = OhemConfig { base_threshold: 1.5, min_kept: 3, ignore_id: IGNORE_ID };
    let (_, loss) = ohem_select(&losses, &config).unwrap();
    assert_eq!(loss, 2.0);
    let config = OhemConfig { base_threshold: 1.5, min_kept: 1, ignore_id: IGNORE_ID };
    let (_, loss) = ohem_select(&losses, &config).unwrap();
    assert_eq!(loss, 2.5);
    let config = OhemConfig { base_threshold: 10.0, min_kept: 100, ignore_id: IGNORE_ID };
    let (_, loss) = ohem_select(&losses, &config).unwrap();
    assert_eq!(loss, 1.625);

    // The focal loss with no damping and unit weight is cross entropy.
    let probs = true_class_prob(&logits, &gt, IGNORE_ID).unwrap();
    let (focal, clamped) =
        focal_loss(&probs, &FocalConfig { alpha_scale: 1.0, gamma: 0.0 }).unwrap();
    assert_eq!(clamped, 0);
    let ce = pixel_ce(&logits, &gt, IGNORE_ID).unwrap();
    for (p, (&f, &c)) in focal.data().iter().zip(ce.values()).enumerate() {
        if ce.valid()[p] {
            assert!((f - c).abs() < 1e-9, "pixel {p}: focal {f} vs ce {c}");
        }
    }
    println!(
        "criterion 7 PASS: gradient max error {max_err:.2e} < 1e-4 at step 1e-5, mining hand \
         cases exact, undamped focal equals cross entropy within 1e-9"
    );
}

#[test]
fn criterion_08_augmentation_determinism_and_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let data: Vec<f32> = (0..3 * 20 * 28).map(|_| rng.random()).collect();
    let img = ImageTensor::new(3, 20, 28, data).unwrap();

    // Identity configurations return the input bit for bit.
    let no_rain = RainConfig { density: 0.0, ..RainConfig::default() };
    assert_eq!(augment_rain(&img, &no_rain).unwrap().data(), img.data());
    let no_snow = SnowConfig { particle_density: 0.0, cold_shift: 0.0, ..SnowConfig::default() };
    assert_eq!(augment_snow(&img, &no_snow).unwrap().data(), img.data());
    let no_night = NightConfig { brightness: 1.0, contrast: 1.0, saturation: 1.0, hue_shift: 0.0 };
    assert_eq!(augment_night(&img, &no_night).unwrap().data(), img.data());

    // A fixed seed reproduces the output exactly; the functions hold no
    // hidden state, so this also holds across thread counts.
    let rain = RainConfig { density: 600.0, seed: 9, ..RainConfig::default() };
    let first = augment_rain(&img, &rain).unwrap();
    for _ in 0..3 {
        assert_eq!(augment_rain(&img, &rain).unwrap().data(), first.data());
    }
    let snow = SnowConfig { seed: 9, ..SnowConfig::default() };
    assert_eq!(
        augment_snow(&img, &snow).unwrap().data(),
        augment_snow(&img, &snow).unwrap().data()
    );

    // Group identities of the geometric transforms.
    let gt = ClassMap::new(
        20,
        28,
        7,
        (0..20 * 28).map(|_| rng.random_range(0..7)).collect(),
    )
    .unwrap();
    let (f1, g1) = geometric(&img, Some(&gt), &GeometricOp::HorizontalFlip).unwrap();
    let (f2, g2) = geometric(&f1, g1.as_ref(), &GeometricOp::HorizontalFlip).unwrap();
    assert_eq!(f2.data(), img.data());
    assert_eq!(g2.unwrap().data(), gt.data());
    let mut rotated = img.clone();
    for _ in 0..4 {
        rotated = geometric(&rotated, None, &GeometricOp::Rotate90).unwrap().0;
    }
    assert_eq!(rotated.data(), img.data());
    println!(
        "criterion 8 PASS: identity configs bit-exact, seeded outputs reproducible, double \
         flip and quadruple rotation return the originals exactly"
    );
}

#[test]
fn criterion_09_golden_fixture_and_pipeline_improvement() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden");
    let tmp = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&golden).unwrap() {
        let entry = entry.unwrap();
        fs::copy(entry.path(), tmp.path().join(entry.file_name())).unwrap();
    }

    // The evaluation command reproduces the checked-in baseline report
    // byte for byte.
    let eval = EvalArgs {
        manifest: tmp.path().join("manifest.jsonl"),
        num_classes: uqseg::synthetic::FIXTURE_CLASSES,
        ood_ids: vec![IGNORE_ID],
        aggregate: Aggregation::Global,
        bins: DEFAULT_ECE_BINS,
        out_dir: tmp.path().join("work/baseline"),
    };
    eval.run().unwrap();
    for (produced, checked_in) in [
        ("work/baseline/report.json", "baseline-report.json"),
        ("work/baseline/report.csv", "baseline-report.csv"),
    ] {
        assert_eq!(
            fs::read(tmp.path().join(produced)).unwrap(),
            fs::read(golden.join(checked_in)).unwrap(),
            "{checked_in} drifted"
        );
    }

    // The fusion recipe runs end to end and reproduces its golden report.
    let recipe = Recipe::load(&tmp.path().join("recipe.json")).unwrap();
    recipe.run().unwrap();
    for name in ["report.json", "report.csv"] {
        assert_eq!(
            fs::read(tmp.path().join("work/report").join(name)).unwrap(),
            fs::read(golden.join(name)).unwrap(),
            "{name} drifted"
        );
    }

    // And it strictly improves anomaly average precision over the raw
    // softmax baseline.
    let parse = |path: &Path| -> f64 {
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
        report["mAUPR"].as_f64().unwrap()
    };
    let baseline_aupr = parse(&tmp.path().join("work/baseline/report.json"));
    let fused_aupr = parse(&tmp.path().join("work/report/report.json"));
    assert!(
        fused_aupr > baseline_aupr,
        "pipeline did not improve AUPR: {fused_aupr} vs {baseline_aupr}"
    );
    println!(
        "criterion 9 PASS: golden reports reproduced byte-for-byte, pipeline lifts AUPR \
         {baseline_aupr:.4} -> {fused_aupr:.4}"
    );
}

#[test]
fn criterion_10_reference_scores_are_documented_and_consistent() {
    // These published scores need trained networks and a withheld test
    // set, so they are shipped as reference numbers, not reproduced. The
    // consistency checks here pin the recorded values down.
    let base = REFERENCE_BASELINE;
    let ts = REFERENCE_DROPOUT_ENSEMBLE_TS;
    let pts = REFERENCE_DROPOUT_ENSEMBLE_PTS;
    for row in [base, ts, pts] {
        for v in [row.mauroc, row.maupr, row.mfpr, row.mece, row.miou] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!((base.mauroc, base.maupr), (0.7337, 0.1790));
    assert_eq!((base.mfpr, base.mece, base.miou), (0.5253, 0.2880, 0.3690));
    assert_eq!((pts.mauroc, pts.maupr), (0.8356, 0.2502));
    assert_eq!((pts.mfpr, pts.mece, pts.miou), (0.3898, 0.0942, 0.4558));
    assert_eq!(ts.mece, 0.1005);
    // The ensemble rows beat the baseline on every metric, and the
    // polynomial variant beats plain temperature scaling.
    for row in [ts, pts] {
        assert!(row.mauroc > base.mauroc && row.maupr > base.maupr && row.miou > base.miou);
        assert!(row.mfpr < base.mfpr && row.mece < base.mece);
    }
    assert!(pts.mece < ts.mece);
    println!(
        "criterion 10 PASS: reference scores shipped as documented constants; ensemble rows \
         dominate the baseline and the polynomial variant has the best calibration"
    );
}
