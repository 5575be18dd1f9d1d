//! Compares cross entropy with its hard-example-mining, focal, and
//! soft-target variants on a small labeled tile.
//!
//! Run with: cargo run --example robust_losses

use uqseg::losses::{
    ce_gradient, focal_loss, ohem_ce, pixel_ce, soft_ce, true_class_prob, FocalConfig,
    OhemConfig,
};
use uqseg::tensor::{ClassMap, LogitMap, ProbabilityMap, IGNORE_ID};

fn main() -> uqseg::Result<()> {
    // A 2x3 tile with three classes. Pixels 0 and 1 are easy, pixels 2
    // and 3 are hard, pixel 4 is misclassified, pixel 5 is unlabeled.
    let logits = LogitMap::new(
        3,
        2,
        3,
        vec![
            4.0, 3.0, 0.4, 0.2, -1.0, 0.0, // class 0
            0.0, 0.5, 0.3, 0.4, 2.0, 0.0, // class 1
            0.0, 0.0, 0.2, 0.1, 0.5, 0.0, // class 2
        ],
    )?;
    let gt = ClassMap::new(2, 3, 3, vec![0, 0, 0, 1, 0, IGNORE_ID])?;

    let ce = pixel_ce(&logits, &gt, IGNORE_ID)?;
    println!("per-pixel cross entropy: {:?}", ce.values());
    println!("mean cross entropy: {:.4}", ce.mean().unwrap());

    // Hard-example mining keeps only the most difficult pixels. With a
    // low floor on the kept count, easy pixels drop out of the mean.
    let ohem = OhemConfig { base_threshold: 0.7, min_kept: 2, ignore_id: IGNORE_ID };
    let (mask, loss) = ohem_ce(&logits, &gt, &ohem)?;
    let kept: Vec<usize> =
        (0..6).filter(|&p| mask.data()[p]).collect();
    println!("\nmined pixels {kept:?} give mean loss {loss:.4}");

    // Focal loss damps well-classified pixels instead of dropping them.
    let probs = true_class_prob(&logits, &gt, IGNORE_ID)?;
    let (focal, clamped) = focal_loss(&probs, &FocalConfig::default())?;
    assert_eq!(clamped, 0);
    println!("focal losses: {:?}", focal.data());

    // Soft targets: a pixel labeled 60/40 between two classes.
    let targets = ProbabilityMap::new(
        3,
        1,
        1,
        vec![0.6, 0.4, 0.0],
    )?;
    let one_pixel = LogitMap::new(3, 1, 1, vec![1.0, 0.0, -2.0])?;
    let soft = soft_ce(&one_pixel, &targets)?;
    println!("soft cross entropy on a 60/40 pixel: {:.4}", soft.data()[0]);

    // The analytic gradient drives training-side checks: softmax minus
    // the one-hot target, averaged over labeled pixels.
    let grad = ce_gradient(&logits, &gt, IGNORE_ID)?;
    println!("\ngradient w.r.t. the first pixel's logits:");
    let pixels = logits.pixel_count();
    for c in 0..3 {
        println!("  class {c}: {:+.5}", grad[c * pixels]);
    }
    Ok(())
}
