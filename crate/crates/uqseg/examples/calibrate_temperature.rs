//! Fits plain and polynomial temperature scaling on an overconfident
//! model and reports the calibration error before and after. Also shows
//! the mask-classification reduction with a temperature applied.
//!
//! Run with: cargo run --example calibrate_temperature

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use uqseg::calibration::{
    apply_temperature, fit_poly_temperature, fit_temperature, maskformer_output, FitObjective,
    MaskFormerOutput, TemperatureParams,
};
use uqseg::metrics::BinnedCalibration;
use uqseg::tensor::{ClassMap, LogitMap};

const CLASSES: usize = 6;
const SIDE: usize = 48;

/// Synthesizes logits whose softmax claims more confidence than the
/// labels justify: the margin is scaled up five-fold.
fn overconfident_dataset(seed: u64) -> (LogitMap, ClassMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = SIDE * SIDE;
    let mut logits = vec![0f32; CLASSES * pixels];
    let mut labels = vec![0u8; pixels];
    for p in 0..pixels {
        let true_class = rng.random_range(0..CLASSES);
        // A modest true margin, inflated by five before it reaches us.
        let margin: f64 = rng.random_range(0.2..1.2);
        for c in 0..CLASSES {
            let base = if c == true_class { margin } else { 0.0 };
            logits[c * pixels + p] = (5.0 * base) as f32;
        }
        // The label matches the argmax only as often as the true margin
        // warrants, so the inflated softmax is systematically too sure.
        let p_correct = margin.exp() / (margin.exp() + (CLASSES - 1) as f64);
        labels[p] = if rng.random::<f64>() < p_correct {
            true_class as u8
        } else {
            ((true_class + 1 + rng.random_range(0..CLASSES - 1)) % CLASSES) as u8
        };
    }
    (
        LogitMap::new(CLASSES, SIDE, SIDE, logits).unwrap(),
        ClassMap::new(SIDE, SIDE, CLASSES, labels).unwrap(),
    )
}

/// Calibration error of softmax(logits / tau) against the labels.
fn ece_at(logits: &LogitMap, gt: &ClassMap, tau: f64) -> f64 {
    let probs = apply_temperature(logits, &TemperatureParams::new(tau).unwrap()).unwrap();
    let pixels = probs.pixel_count();
    let mut bins = BinnedCalibration::zeros(15).unwrap();
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

fn main() -> uqseg::Result<()> {
    let (logits, gt) = overconfident_dataset(7);
    let before = ece_at(&logits, &gt, 1.0);
    println!("calibration error at temperature 1.0: {before:.4}");

    let ts = fit_temperature(
        std::slice::from_ref(&logits),
        std::slice::from_ref(&gt),
        FitObjective::Ece,
    )?;
    let after = ece_at(&logits, &gt, ts.tau);
    println!("fitted temperature {:.3} cuts it to {after:.4}", ts.tau);

    let pts = fit_poly_temperature(
        std::slice::from_ref(&logits),
        std::slice::from_ref(&gt),
        FitObjective::Ece,
    )?;
    println!(
        "polynomial fit: tau1={:.3} tau2={:.3} tau3={:.3} enabled={:?}",
        pts.tau1, pts.tau2, pts.tau3, pts.enabled
    );

    // Mask-classification outputs reduce to the same per-pixel form: each
    // query's tempered class distribution is weighted by its mask.
    let mask_out = MaskFormerOutput::new(
        2,
        3,
        1,
        2,
        vec![4.0, 0.0, 0.0, 0.0, 3.0, 0.0],
        vec![6.0, -6.0, -6.0, 6.0],
    )?;
    let (pred, conf) = maskformer_output(&mask_out, &TemperatureParams::new(2.0)?)?;
    println!(
        "\nmask reduction at temperature 2.0: preds {:?}, confidences {:?}",
        pred.data(),
        conf.data()
    );
    Ok(())
}
