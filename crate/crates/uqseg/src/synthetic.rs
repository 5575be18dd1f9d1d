//! Deterministic synthetic fixtures for tests and examples.
//!
//! The fixture is a tiny four-image dataset with a known anomaly layout,
//! built so that the reciprocal-overlay-region pipeline provably improves
//! anomaly ranking over the raw softmax confidence:
//!
//! - Ground truth is five vertical class bands; each image carries one
//!   8x8 unlabeled anomaly block at a different horizontal position.
//! - Logits give ordinary pixels confidence 0.8, the block rim 0.5, and
//!   the block interior about 0.344. Twenty scattered labeled pixels per
//!   image also get the interior logits, so by raw confidence the rim
//!   ranks below those in-distribution impostors.
//! - Two auxiliary confidence maps agree that the whole block is doubtful
//!   (0.65 rim, 0.2 interior) while giving impostors 0.7. Reciprocal
//!   fusion pulls the interior to 0.1 and the rim to 0.325; overlaying
//!   at threshold 0.3 splices only the interior into the raw map; region
//!   flattening then drags the rim down to the interior minimum because
//!   rim and interior form one connected low-confidence region whose
//!   majority is far below the anomaly threshold. The impostors stay
//!   isolated single-pixel regions and keep their value.
//!
//! After the pipeline every anomaly pixel scores below every labeled
//! pixel, so ranking metrics hit their maximum; the improvement over the
//! raw map is strict by a wide margin at every step.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{
    save_class_map, save_confidence_uqt1, save_image_png, save_logit_map,
};
use crate::manifest::{DatasetManifest, ManifestRecord};
use crate::scoring::msp_confidence;
use crate::tensor::{ClassMap, ConfidenceMap, ImageTensor, LogitMap, IGNORE_ID};

pub const FIXTURE_IMAGES: usize = 4;
pub const FIXTURE_HEIGHT: usize = 24;
pub const FIXTURE_WIDTH: usize = 32;
pub const FIXTURE_CLASSES: usize = 5;

const BLOB_TOP: usize = 8;
const BLOB_BOTTOM: usize = 16;
const BLOB_SIDE: usize = 8;
const NOISE_COUNT: usize = 20;

/// Pixel roles within one fixture image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PixelKind {
    /// Labeled pixel with confident, correct logits.
    Clean,
    /// Rim of the anomaly block (top and bottom rows).
    BlobEdge,
    /// Interior of the anomaly block.
    BlobCore,
    /// Labeled pixel that got the interior's unconfident logits.
    Noise,
}

/// All tensors for one fixture image.
#[derive(Debug, Clone)]
pub struct FixtureImage {
    pub image: ImageTensor,
    pub gt: ClassMap,
    pub logits: LogitMap,
    /// Baseline softmax confidence of `logits`.
    pub conf: ConfidenceMap,
    /// First auxiliary model's confidence map.
    pub conf_a: ConfidenceMap,
    /// Second auxiliary model's confidence map.
    pub conf_b: ConfidenceMap,
}

fn blob_left(index: usize) -> usize {
    4 + 6 * index
}

fn is_noise(y: usize, x: usize) -> bool {
    (0..NOISE_COUNT).any(|k| y == 2 * (k % 4) && x == (3 * k + 2) % FIXTURE_WIDTH)
}

/// Role of the pixel at `(y, x)` in image `index`.
pub fn pixel_kind(index: usize, y: usize, x: usize) -> PixelKind {
    let left = blob_left(index);
    if (BLOB_TOP..BLOB_BOTTOM).contains(&y) && (left..left + BLOB_SIDE).contains(&x) {
        if y == BLOB_TOP || y == BLOB_BOTTOM - 1 {
            PixelKind::BlobEdge
        } else {
            PixelKind::BlobCore
        }
    } else if is_noise(y, x) {
        PixelKind::Noise
    } else {
        PixelKind::Clean
    }
}

/// Class of the vertical band containing column `x`.
pub fn band_class(x: usize) -> u8 {
    (x / 7).min(FIXTURE_CLASSES - 1) as u8
}

/// Builds image `index` of the fixture (0 to 3).
pub fn fixture_image(index: usize) -> Result<FixtureImage> {
    if index >= FIXTURE_IMAGES {
        return Err(Error::invalid(format!(
            "fixture has {FIXTURE_IMAGES} images, index {index} is out of range"
        )));
    }
    let (h, w, nc) = (FIXTURE_HEIGHT, FIXTURE_WIDTH, FIXTURE_CLASSES);
    let pixels = h * w;
    let mut image = vec![0f32; 3 * pixels];
    let mut gt = vec![0u8; pixels];
    let mut logits = vec![0f32; nc * pixels];
    let mut conf_a = vec![0f32; pixels];
    let mut conf_b = vec![0f32; pixels];
    let confident = 16f32.ln();
    let rim = 4f32.ln();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let kind = pixel_kind(index, y, x);
            let in_blob = matches!(kind, PixelKind::BlobEdge | PixelKind::BlobCore);
            image[p] = x as f32 / (w - 1) as f32;
            image[pixels + p] = y as f32 / (h - 1) as f32;
            image[2 * pixels + p] = if in_blob { 0.75 } else { 0.25 };
            gt[p] = if in_blob { IGNORE_ID } else { band_class(x) };
            match kind {
                PixelKind::Clean => {
                    logits[band_class(x) as usize * pixels + p] = confident;
                    conf_a[p] = 0.80;
                    conf_b[p] = 0.85;
                }
                PixelKind::BlobEdge => {
                    logits[p] = rim;
                    conf_a[p] = 0.65;
                    conf_b[p] = 0.65;
                }
                PixelKind::BlobCore => {
                    logits[p] = 1.1;
                    logits[pixels + p] = 1.0;
                    conf_a[p] = 0.2;
                    conf_b[p] = 0.2;
                }
                PixelKind::Noise => {
                    logits[p] = 1.1;
                    logits[pixels + p] = 1.0;
                    conf_a[p] = 0.7;
                    conf_b[p] = 0.7;
                }
            }
        }
    }
    let logits = LogitMap::new(nc, h, w, logits)?;
    let conf = msp_confidence(&logits)?;
    Ok(FixtureImage {
        image: ImageTensor::new(3, h, w, image)?,
        gt: ClassMap::new(h, w, nc, gt)?,
        logits,
        conf,
        conf_a: ConfidenceMap::new(h, w, conf_a)?,
        conf_b: ConfidenceMap::new(h, w, conf_b)?,
    })
}

fn fuse_step(index: usize, op: &str, args: serde_json::Value) -> serde_json::Value {
    serde_json::json!({ "name": format!("{op}{index}"), "op": "fuse", "args": args })
}

/// The reciprocal-overlay-region recipe evaluated on the fused maps.
pub fn fixture_recipe() -> serde_json::Value {
    let mut steps = Vec::new();
    for i in 0..FIXTURE_IMAGES {
        steps.push(fuse_step(
            i,
            "recip",
            serde_json::json!({
                "op": "recip",
                "conf_a": format!("confA{i}.uqt1"),
                "conf_b": format!("confB{i}.uqt1"),
                "out_conf": format!("work/recip{i}.uqt1"),
            }),
        ));
    }
    for i in 0..FIXTURE_IMAGES {
        steps.push(fuse_step(
            i,
            "overlay",
            serde_json::json!({
                "op": "overlay",
                "background": format!("conf{i}.uqt1"),
                "overlay": format!("work/recip{i}.uqt1"),
                "threshold": 0.3,
                "out_conf": format!("work/overlay{i}.uqt1"),
            }),
        ));
    }
    for i in 0..FIXTURE_IMAGES {
        steps.push(fuse_step(
            i,
            "regionnorm",
            serde_json::json!({
                "op": "regionnorm",
                "conf": format!("work/overlay{i}.uqt1"),
                "config": "regionnorm.json",
                "out_conf": format!("work/final{i}.uqt1"),
            }),
        ));
    }
    steps.push(serde_json::json!({
        "name": "eval",
        "op": "eval",
        "args": {
            "manifest": "fused-manifest.jsonl",
            "num_classes": FIXTURE_CLASSES,
            "out_dir": "work/report",
        },
    }));
    serde_json::json!({ "steps": steps })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::invalid(format!("cannot serialize fixture JSON: {e}")))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes the full fixture into `dir`: per-image tensors, the baseline
/// and fused manifests, the pipeline recipe, and the region config.
/// Returns the written files. The recipe's outputs land under `work/`,
/// which this function does not create.
pub fn write_fixture(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut base_records = Vec::new();
    let mut fused_records = Vec::new();
    for i in 0..FIXTURE_IMAGES {
        let fx = fixture_image(i)?;
        let image = format!("img{i}.png");
        let gt = format!("gt{i}.png");
        let pred = format!("pred{i}.png");
        let conf = format!("conf{i}.uqt1");
        let logits = format!("logits{i}.uqt1");
        save_image_png(dir.join(&image), &fx.image)?;
        save_class_map(dir.join(&gt), &fx.gt)?;
        save_class_map(dir.join(&pred), &crate::scoring::argmax_prediction(&fx.logits)?)?;
        save_confidence_uqt1(dir.join(&conf), &fx.conf)?;
        save_logit_map(dir.join(&logits), &fx.logits)?;
        save_confidence_uqt1(dir.join(format!("confA{i}.uqt1")), &fx.conf_a)?;
        save_confidence_uqt1(dir.join(format!("confB{i}.uqt1")), &fx.conf_b)?;
        for name in [&image, &gt, &pred, &conf, &logits] {
            written.push(dir.join(name));
        }
        written.push(dir.join(format!("confA{i}.uqt1")));
        written.push(dir.join(format!("confB{i}.uqt1")));
        base_records.push(ManifestRecord {
            image: PathBuf::from(&image),
            gt: PathBuf::from(&gt),
            pred: PathBuf::from(&pred),
            conf: PathBuf::from(&conf),
            logits: Some(PathBuf::from(&logits)),
        });
        fused_records.push(ManifestRecord {
            image: PathBuf::from(&image),
            gt: PathBuf::from(&gt),
            pred: PathBuf::from(&pred),
            conf: PathBuf::from(format!("work/final{i}.uqt1")),
            logits: None,
        });
    }
    let ood_ids = BTreeSet::from([IGNORE_ID]);
    let base = DatasetManifest::from_records(base_records, FIXTURE_CLASSES, ood_ids.clone())?;
    base.save(dir.join("manifest.jsonl"))?;
    written.push(dir.join("manifest.jsonl"));
    let fused = DatasetManifest::from_records(fused_records, FIXTURE_CLASSES, ood_ids)?;
    fused.save(dir.join("fused-manifest.jsonl"))?;
    written.push(dir.join("fused-manifest.jsonl"));
    write_json(&dir.join("recipe.json"), &fixture_recipe())?;
    written.push(dir.join("recipe.json"));
    // Kernel 1 keeps the mean filter a no-op: the fixture exercises the
    // grouping and flattening stages, which do all the ranking work here.
    write_json(&dir.join("regionnorm.json"), &serde_json::json!({ "mean_filter_kernel": 1 }))?;
    written.push(dir.join("regionnorm.json"));
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_roles_partition_the_grid() {
        let mut counts = [0usize; 4];
        for y in 0..FIXTURE_HEIGHT {
            for x in 0..FIXTURE_WIDTH {
                match pixel_kind(2, y, x) {
                    PixelKind::Clean => counts[0] += 1,
                    PixelKind::BlobEdge => counts[1] += 1,
                    PixelKind::BlobCore => counts[2] += 1,
                    PixelKind::Noise => counts[3] += 1,
                }
            }
        }
        assert_eq!(counts[1], 2 * BLOB_SIDE);
        assert_eq!(counts[2], 6 * BLOB_SIDE);
        assert_eq!(counts[3], NOISE_COUNT);
        assert_eq!(counts.iter().sum::<usize>(), FIXTURE_HEIGHT * FIXTURE_WIDTH);
    }

    #[test]
    fn noise_pixels_are_isolated_and_clear_of_the_blob() {
        let mut spots = Vec::new();
        for y in 0..FIXTURE_HEIGHT {
            for x in 0..FIXTURE_WIDTH {
                if is_noise(y, x) {
                    spots.push((y as i64, x as i64));
                }
            }
        }
        assert_eq!(spots.len(), NOISE_COUNT);
        for (i, &(y1, x1)) in spots.iter().enumerate() {
            assert!(y1 < BLOB_TOP as i64 - 1, "noise must not touch the blob");
            for &(y2, x2) in &spots[i + 1..] {
                assert!(
                    (y1 - y2).abs() > 1 || (x1 - x2).abs() > 1,
                    "noise pixels must not be adjacent: ({y1},{x1}) ({y2},{x2})"
                );
            }
        }
    }

    #[test]
    fn baseline_confidence_has_three_levels() {
        let fx = fixture_image(0).unwrap();
        for y in 0..FIXTURE_HEIGHT {
            for x in 0..FIXTURE_WIDTH {
                let v = fx.conf.data()[y * FIXTURE_WIDTH + x] as f64;
                let expect = match pixel_kind(0, y, x) {
                    PixelKind::Clean => 0.8,
                    PixelKind::BlobEdge => 0.5,
                    PixelKind::BlobCore | PixelKind::Noise => 0.344_42,
                };
                assert!((v - expect).abs() < 1e-4, "({y},{x}): {v} vs {expect}");
            }
        }
    }

    #[test]
    fn predictions_are_correct_off_the_anomaly() {
        let fx = fixture_image(1).unwrap();
        let pred = crate::scoring::argmax_prediction(&fx.logits).unwrap();
        for y in 0..FIXTURE_HEIGHT {
            for x in 0..FIXTURE_WIDTH {
                let p = y * FIXTURE_WIDTH + x;
                match pixel_kind(1, y, x) {
                    PixelKind::Clean => assert_eq!(pred.data()[p], band_class(x)),
                    _ => assert_eq!(pred.data()[p], 0),
                }
            }
        }
    }

    #[test]
    fn fixture_round_trips_through_a_directory() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_fixture(dir.path()).unwrap();
        assert_eq!(written.len(), 7 * FIXTURE_IMAGES + 4);
        for path in &written {
            assert!(path.is_file(), "missing {}", path.display());
        }
        let manifest = DatasetManifest::load(
            dir.path().join("manifest.jsonl"),
            FIXTURE_CLASSES,
            BTreeSet::from([IGNORE_ID]),
        )
        .unwrap();
        assert_eq!(manifest.records.len(), FIXTURE_IMAGES);
    }

    #[test]
    fn recipe_validates() {
        let dir = tempfile::tempdir().unwrap();
        write_fixture(dir.path()).unwrap();
        let recipe = crate::cli::Recipe::load(&dir.path().join("recipe.json")).unwrap();
        assert_eq!(recipe.steps.len(), 3 * FIXTURE_IMAGES + 1);
    }
}
