//! Blends training-time feature statistics with statistics measured on a
//! single test input, weighting by how far the input has drifted.
//!
//! Run with: cargo run --example adapt_stats

use uqseg::adapt::{
    mix_stats, mixing_coefficient, normalize_features, FeatureStats, LayerStats, BN_EPSILON,
};
use uqseg::io::TensorData;

fn main() -> uqseg::Result<()> {
    // Statistics accumulated over the training set.
    let running = FeatureStats::new(vec![
        LayerStats::new("stem", vec![0.0, 0.1], vec![1.0, 0.9])?,
        LayerStats::new("block1", vec![0.5, -0.2, 0.3], vec![0.8, 1.1, 1.0])?,
    ])?;

    // A mildly shifted test input: small drift, so the blend should stay
    // close to balanced.
    let near = FeatureStats::new(vec![
        LayerStats::new("stem", vec![0.1, 0.15], vec![1.05, 0.95])?,
        LayerStats::new("block1", vec![0.55, -0.1, 0.35], vec![0.85, 1.05, 1.0])?,
    ])?;
    let alpha_near = mixing_coefficient(&running, &near)?;

    // A heavily shifted input (think dense fog): large divergence pushes
    // the blend toward the instance statistics.
    let far = FeatureStats::new(vec![
        LayerStats::new("stem", vec![2.5, -1.8], vec![0.3, 2.4])?,
        LayerStats::new("block1", vec![-1.5, 2.0, -2.2], vec![2.0, 0.25, 3.0])?,
    ])?;
    let alpha_far = mixing_coefficient(&running, &far)?;

    println!("blend weight for the near-distribution input: {:.4}", alpha_near.alpha);
    println!("blend weight for the far-distribution input:  {:.4}", alpha_far.alpha);

    let mixed = mix_stats(&running, &far, &alpha_far)?;
    for (r, m) in running.layers().iter().zip(mixed.layers()) {
        println!(
            "layer {}: running means {:?} -> blended means {:?}",
            r.name(),
            r.mean(),
            m.mean()
        );
    }

    // Normalizing a 2-channel feature map with the blended statistics of
    // the first layer.
    let features = TensorData::new(
        vec![2, 2, 2],
        vec![0.5, 1.0, -0.5, 2.0, 0.0, 0.3, -0.1, 0.8],
    )?;
    let normalized = normalize_features(&features, &mixed, 0, BN_EPSILON)?;
    println!("\nnormalized stem features: {:?}", normalized.data());
    Ok(())
}
