//! Evaluates a small synthetic dataset and prints the metric report in
//! both aggregation modes.
//!
//! Run with: cargo run --example evaluate_metrics

use std::collections::BTreeSet;

use uqseg::evaluate::{evaluate_dataset, Aggregation, EvalConfig};
use uqseg::manifest::DatasetManifest;
use uqseg::synthetic::write_fixture;
use uqseg::tensor::IGNORE_ID;

fn main() -> uqseg::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    write_fixture(dir.path())?;
    let manifest = DatasetManifest::load(
        dir.path().join("manifest.jsonl"),
        uqseg::synthetic::FIXTURE_CLASSES,
        BTreeSet::from([IGNORE_ID]),
    )?;
    println!("{} records loaded\n", manifest.records.len());

    // Global pooling ranks every pixel of the dataset in one pool.
    let global = evaluate_dataset(&manifest, &EvalConfig::default())?;
    println!("pooled over all pixels:");
    print!("{}", global.to_table_string());

    // Per-image averaging computes each metric on each image first.
    let config = EvalConfig { aggregation: Aggregation::PerImage, ..EvalConfig::default() };
    let per_image = evaluate_dataset(&manifest, &config)?;
    println!("\naveraged over images:");
    print!("{}", per_image.to_table_string());

    println!("\nreport as JSON:\n{}", global.to_json_string());
    Ok(())
}
