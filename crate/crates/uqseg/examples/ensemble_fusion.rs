//! Combines the outputs of several models: probability averaging,
//! majority voting, pessimistic confidence fusion, low-confidence
//! overlays, region flattening, and bias disagreement.
//!
//! Run with: cargo run --example ensemble_fusion

use uqseg::fusion::{
    average_probs, bias_disagreement_ood, majority_vote, overlay_fuse, reciprocal_fuse,
    region_normalize, RegionNormConfig, VoteConfig,
};
use uqseg::tensor::{ClassMap, ConfidenceMap, ProbabilityMap};

fn main() -> uqseg::Result<()> {
    // Averaging softmax outputs of two models over two pixels.
    let model_1 = ProbabilityMap::new(2, 1, 2, vec![0.9, 0.2, 0.1, 0.8])?;
    let model_2 = ProbabilityMap::new(2, 1, 2, vec![0.5, 0.6, 0.5, 0.4])?;
    let avg = average_probs(&[model_1, model_2])?;
    println!("averaged probabilities: {:?}", avg.data());

    // Majority vote across three prediction maps; the preferred model
    // settles ties.
    let preds = vec![
        ClassMap::new(1, 3, 4, vec![0, 1, 2])?,
        ClassMap::new(1, 3, 4, vec![0, 1, 3])?,
        ClassMap::new(1, 3, 4, vec![1, 2, 3])?,
    ];
    let voted = majority_vote(&preds, &VoteConfig { preferred_model: 2 })?;
    println!("vote result: {:?}", voted.data());

    // Reciprocal fusion is pessimistic: the result is below the smaller
    // of the two confidences, so one doubtful model is enough to flag.
    let conf_a = ConfidenceMap::new(1, 3, vec![0.9, 0.6, 0.2])?;
    let conf_b = ConfidenceMap::new(1, 3, vec![0.8, 0.2, 0.2])?;
    let recip = reciprocal_fuse(&conf_a, &conf_b)?;
    println!("reciprocal fusion: {:?}", recip.data());

    // Overlay: splice a specialist's map in wherever it is very unsure.
    let background = ConfidenceMap::new(1, 3, vec![0.7, 0.7, 0.7])?;
    let spliced = overlay_fuse(&background, &recip, 0.3)?;
    println!("after overlay at threshold 0.3: {:?}", spliced.data());

    // Region flattening: a connected low-confidence region whose pixels
    // are mostly very unsure is pulled down to its own minimum, so the
    // whole object ranks as one anomaly instead of a speckled one.
    let mut grid = vec![0.9f32; 49];
    for y in 2..5 {
        for x in 2..5 {
            grid[y * 7 + x] = if (y, x) == (2, 2) { 0.55 } else { 0.2 };
        }
    }
    let conf = ConfidenceMap::new(7, 7, grid)?;
    let config = RegionNormConfig { mean_filter_kernel: 1, ..RegionNormConfig::default() };
    let flattened = region_normalize(&conf, &config)?;
    println!(
        "\nblock corner rode its region down: {} -> {}",
        conf.data()[2 * 7 + 2],
        flattened.data()[2 * 7 + 2]
    );

    // With the default kernel the same corner is first smoothed against
    // its neighbors and climbs out of the low-confidence set instead.
    let smoothed = region_normalize(&conf, &RegionNormConfig::default())?;
    println!(
        "with mean filtering it escapes instead: {} -> {}",
        conf.data()[2 * 7 + 2],
        smoothed.data()[2 * 7 + 2]
    );

    // Two models biased toward different classes: pixels where each
    // falls back on its own bias are suspicious.
    let pred_a = ClassMap::new(1, 4, 4, vec![2, 1, 2, 0])?;
    let pred_b = ClassMap::new(1, 4, 4, vec![3, 1, 3, 3])?;
    let mask = bias_disagreement_ood(&pred_a, &pred_b, 2, 3)?;
    println!("bias disagreement mask: {:?}", mask.data());
    Ok(())
}
