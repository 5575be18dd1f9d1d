//! Turns logits into predictions and anomaly-aware confidence with the
//! softmax and energy scoring rules, and shows how the two differ.
//!
//! Run with: cargo run --example ood_scoring

use uqseg::metrics::{auroc, ood_score};
use uqseg::scoring::{argmax_prediction, energy_score, energy_to_confidence, msp_confidence};
use uqseg::tensor::LogitMap;

fn main() -> uqseg::Result<()> {
    // Four pixels, three classes, class-major layout. Pixel 0 is very
    // confident, pixel 1 moderately so, pixel 2 is an even split, and
    // pixel 3 has uniformly small logits (low evidence overall).
    let logits = LogitMap::new(
        3,
        1,
        4,
        vec![
            8.0, 3.0, 1.0, 0.1, // class 0
            0.0, 2.5, 1.0, 0.0, // class 1
            0.0, 0.0, 1.0, 0.1, // class 2
        ],
    )?;

    let pred = argmax_prediction(&logits)?;
    let msp = msp_confidence(&logits)?;
    let energy = energy_score(&logits)?;
    let energy_conf = energy_to_confidence(&energy)?;

    println!("pixel  pred  softmax-conf  raw-energy  energy-conf");
    for p in 0..4 {
        println!(
            "{:<7}{:<6}{:<14.4}{:<12.4}{:<12.4}",
            p,
            pred.data()[p],
            msp.data()[p],
            energy.data()[p],
            energy_conf.data()[p]
        );
    }

    // The softmax score only sees the margin between classes, so pixel 3
    // (tiny but separated logits) looks as ordinary as pixel 1. The energy
    // score sees the total evidence and flags it.
    println!("\nanomaly score = 1 - confidence:");
    for p in 0..4 {
        println!(
            "  pixel {p}: softmax {:.4}  energy {:.4}",
            ood_score(msp.data()[p]),
            ood_score(energy_conf.data()[p])
        );
    }

    // Ranking quality if pixel 3 were the only true anomaly:
    let truth = [false, false, false, true];
    let msp_samples: Vec<(f64, bool)> = (0..4)
        .map(|p| (ood_score(msp.data()[p]), truth[p]))
        .collect();
    let energy_samples: Vec<(f64, bool)> = (0..4)
        .map(|p| (ood_score(energy_conf.data()[p]), truth[p]))
        .collect();
    println!(
        "\nAUROC on this toy set: softmax {:?}, energy {:?}",
        auroc(&msp_samples)?,
        auroc(&energy_samples)?
    );
    Ok(())
}
