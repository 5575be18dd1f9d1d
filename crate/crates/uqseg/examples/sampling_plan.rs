//! Training-support utilities: rarity-biased inclusion sampling,
//! confidence-based pseudo-label filtering, and teacher weight tracking.
//!
//! Run with: cargo run --example sampling_plan

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use uqseg::sampling::{
    confidence_filter, ema_update, sample_inclusion, sampling_probability, ClassFrequencies,
    ParamVector,
};
use uqseg::tensor::{ClassMap, ConfidenceMap};

fn main() -> uqseg::Result<()> {
    // Class 2 is rare in the dataset, class 0 dominates.
    let freqs = ClassFrequencies::new(vec![0.7, 0.25, 0.05])?;
    println!("rarity weights: {:?}", freqs.rarity_softmax());

    // An inclusion plan biased toward class 1: the biased class always
    // gets at least a half chance, the others ride their rarity.
    let plan = sampling_probability(&freqs, 1)?;
    println!("inclusion probabilities with bias on class 1: {plan:?}");

    // Drawing a concrete inclusion decision per crop is seeded and
    // reproducible.
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let draws: Vec<bool> = (0..10)
        .map(|_| sample_inclusion(2, &freqs, 1, &mut rng))
        .collect::<uqseg::Result<_>>()?;
    println!("ten seeded draws for rare class 2: {draws:?}");

    // Pseudo-label filtering: per predicted class, pixels below the
    // class's own mean confidence are masked, but only for the classes
    // whose confidence is most spread out.
    let conf = ConfidenceMap::new(2, 3, vec![0.9, 0.3, 0.8, 0.75, 0.5, 0.95])?;
    let pred = ClassMap::new(2, 3, 4, vec![0, 0, 1, 1, 0, 1])?;
    let mask = confidence_filter(&conf, &pred, 1)?;
    println!("\nfiltered pixels (true = dropped): {:?}", mask.data());

    // A teacher tracking a student with momentum 0.99.
    let teacher = ParamVector::new(vec![1.0, 0.0, -1.0])?;
    let student = ParamVector::new(vec![0.0, 1.0, 0.0])?;
    let updated = ema_update(&teacher, &student, 0.99)?;
    println!("teacher after one update: {:?}", updated.values());
    Ok(())
}
