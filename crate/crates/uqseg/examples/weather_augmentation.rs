//! Applies seeded weather and geometric augmentations to an image tensor
//! and demonstrates their determinism and label alignment.
//!
//! Run with: cargo run --example weather_augmentation

use uqseg::augment::{
    augment_night, augment_rain, augment_snow, cutout, geometric, CutoutConfig, GeometricOp,
    NightConfig, RainConfig, SnowConfig,
};
use uqseg::tensor::{ClassMap, ImageTensor};

fn channel_means(img: &ImageTensor) -> Vec<f64> {
    let pixels = img.height() * img.width();
    (0..img.channels())
        .map(|c| {
            img.data()[c * pixels..(c + 1) * pixels]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / pixels as f64
        })
        .collect()
}

fn main() -> uqseg::Result<()> {
    // A flat mid-gray RGB frame makes the effects easy to read off the
    // channel means.
    let img = ImageTensor::constant(3, 64, 96, 0.5)?;
    println!("input channel means:        {:?}", channel_means(&img));

    let rain = augment_rain(&img, &RainConfig { density: 800.0, ..RainConfig::default() })?;
    println!("rain brightens streaks:     {:?}", channel_means(&rain));

    let snow = augment_snow(&img, &SnowConfig::default())?;
    println!("snow adds discs, cools:     {:?}", channel_means(&snow));

    let night = augment_night(&img, &NightConfig::default())?;
    println!("night darkens and desaturates: {:?}", channel_means(&night));

    let cut = cutout(&img, &CutoutConfig { rect_fraction: 0.25, ..CutoutConfig::default() })?;
    println!("cutout blanks a square:     {:?}", channel_means(&cut));

    // Same seed, same bits; different seed, different streaks.
    let again = augment_rain(&img, &RainConfig { density: 800.0, ..RainConfig::default() })?;
    assert_eq!(rain.data(), again.data());
    let other = augment_rain(
        &img,
        &RainConfig { density: 800.0, seed: 1, ..RainConfig::default() },
    )?;
    assert_ne!(rain.data(), other.data());
    println!("\nsame seed reproduces the exact same tensor; a new seed does not");

    // Geometric ops carry the label map along with the pixels.
    let tile = ImageTensor::new(1, 2, 3, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5])?;
    let labels = ClassMap::new(2, 3, 6, vec![0, 1, 2, 3, 4, 5])?;
    let (flipped, flipped_labels) =
        geometric(&tile, Some(&labels), &GeometricOp::HorizontalFlip)?;
    println!("\nflipped pixels: {:?}", flipped.data());
    println!("flipped labels: {:?}", flipped_labels.unwrap().data());
    let (rotated, _) = geometric(&tile, None, &GeometricOp::Rotate90)?;
    println!("rotated to {}x{}: {:?}", rotated.height(), rotated.width(), rotated.data());
    Ok(())
}
