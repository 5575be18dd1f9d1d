//! Seeded adverse-weather and geometric augmentations on image tensors:
//! rain streaks, snow particles, night tone mapping, flips, rotations,
//! crops, and cutout.
//!
//! Every augmentation is bit-deterministic for a fixed seed and config,
//! preserves the value range [0, 1], and works in f64 internally. None of
//! the numeric defaults below come from published material; they are
//! toolkit choices, exposed through the configs.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{check_same_grid, ClassMap, ImageTensor};

/// Cold tone shift factor for the red channel per unit of `cold_shift`.
pub const SNOW_RED_SHIFT: f64 = 0.1;
/// Cold tone shift factor for the blue channel per unit of `cold_shift`.
pub const SNOW_BLUE_SHIFT: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RainConfig {
    /// Streaks per megapixel.
    pub density: f64,
    /// Length of each streak in pixels.
    pub streak_length: usize,
    /// Streak direction in degrees away from vertical.
    pub angle: f64,
    /// Gaussian blur applied to the streak layer.
    pub blur_sigma: f64,
    /// Screen-blend weight of the streak layer, in [0, 1].
    pub intensity: f64,
    pub seed: u64,
}

impl Default for RainConfig {
    fn default() -> Self {
        RainConfig {
            density: 400.0,
            streak_length: 24,
            angle: 12.0,
            blur_sigma: 0.8,
            intensity: 0.5,
            seed: 0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.density.is_finite() || self.density < 0.0 {
            return Err(Error::invalid(format!(
                "density must be finite and nonnegative, got {}",
                self.density
            )));
        }
        if self.streak_length == 0 {
            return Err(Error::invalid("streak_length must be at least one pixel"));
        }
        if !self.angle.is_finite() {
            return Err(Error::invalid("angle must be finite"));
        }
        if !self.blur_sigma.is_finite() || self.blur_sigma < 0.0 {
            return Err(Error::invalid(format!(
                "blur_sigma must be finite and nonnegative, got {}",
                self.blur_sigma
            )));
        }
        if !self.intensity.is_finite() || !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::invalid(format!(
                "intensity must be in [0, 1], got {}",
                self.intensity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnowConfig {
    /// Particles per megapixel.
    pub particle_density: f64,
    /// Inclusive range of particle radii in pixels.
    pub size_range: (f64, f64),
    /// Half-height of the vertical box blur over the particle layer.
    pub vertical_blur: usize,
    /// Cold tone shift strength in [0, 1]; requires a 3-channel image
    /// when positive.
    pub cold_shift: f64,
    pub seed: u64,
}

impl Default for SnowConfig {
    fn default() -> Self {
        SnowConfig {
            particle_density: 300.0,
            size_range: (0.5, 2.5),
            vertical_blur: 2,
            cold_shift: 0.3,
            seed: 0,
        }
    }
}

impl SnowConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.particle_density.is_finite() || self.particle_density < 0.0 {
            return Err(Error::invalid(format!(
                "particle_density must be finite and nonnegative, got {}",
                self.particle_density
            )));
        }
        let (lo, hi) = self.size_range;
        if !lo.is_finite() || !hi.is_finite() || lo <= 0.0 || lo > hi {
            return Err(Error::invalid(format!(
                "size_range must be a nonempty positive interval, got ({lo}, {hi})"
            )));
        }
        if !self.cold_shift.is_finite() || !(0.0..=1.0).contains(&self.cold_shift) {
            return Err(Error::invalid(format!(
                "cold_shift must be in [0, 1], got {}",
                self.cold_shift
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NightConfig {
    /// Brightness multiplier, positive.
    pub brightness: f64,
    /// Contrast factor around each channel's mean, positive.
    pub contrast: f64,
    /// Saturation multiplier, nonnegative; requires a 3-channel image
    /// when not one.
    pub saturation: f64,
    /// Hue rotation in degrees; requires a 3-channel image when nonzero
    /// modulo 360.
    pub hue_shift: f64,
}

impl Default for NightConfig {
    fn default() -> Self {
        NightConfig { brightness: 0.4, contrast: 0.8, saturation: 0.6, hue_shift: 0.0 }
    }
}

impl NightConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.brightness.is_finite() || self.brightness <= 0.0 {
            return Err(Error::invalid(format!(
                "brightness must be finite and positive, got {}",
                self.brightness
            )));
        }
        if !self.contrast.is_finite() || self.contrast <= 0.0 {
            return Err(Error::invalid(format!(
                "contrast must be finite and positive, got {}",
                self.contrast
            )));
        }
        if !self.saturation.is_finite() || self.saturation < 0.0 {
            return Err(Error::invalid(format!(
                "saturation must be finite and nonnegative, got {}",
                self.saturation
            )));
        }
        if !self.hue_shift.is_finite() {
            return Err(Error::invalid("hue_shift must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoutConfig {
    /// Fraction of the image area covered by the rectangle, in (0, 1].
    pub rect_fraction: f64,
    pub fill_value: f64,
    pub seed: u64,
}

impl Default for CutoutConfig {
    fn default() -> Self {
        CutoutConfig { rect_fraction: 0.1, fill_value: 0.0, seed: 0 }
    }
}

impl CutoutConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.rect_fraction.is_finite()
            || self.rect_fraction <= 0.0
            || self.rect_fraction > 1.0
        {
            return Err(Error::invalid(format!(
                "rect_fraction must be in (0, 1], got {}",
                self.rect_fraction
            )));
        }
        if !self.fill_value.is_finite() || !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::invalid(format!(
                "fill_value must be in [0, 1], got {}",
                self.fill_value
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometricOp {
    HorizontalFlip,
    /// Quarter turn counterclockwise; output is `W x H`.
    Rotate90,
    Crop(CropRect),
}

fn clip01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn to_f64(img: &ImageTensor) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64).collect()
}

fn from_f64(img: &ImageTensor, data: Vec<f64>) -> Result<ImageTensor> {
    ImageTensor::new(
        img.channels(),
        img.height(),
        img.width(),
        data.into_iter().map(|v| clip01(v) as f32).collect(),
    )
}

/// Separable Gaussian blur with windows shrunk (and weights renormalized)
/// at the border. Sigma zero returns the input unchanged.
fn gaussian_blur(src: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return src.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], len_major: usize, len_minor: usize,
                index: &dyn Fn(usize, usize) -> usize|
     -> Vec<f64> {
        let mut out = vec![0f64; src.len()];
        for a in 0..len_major {
            for b in 0..len_minor {
                let mut sum = 0f64;
                let mut wsum = 0f64;
                for k in -radius..=radius {
                    let bb = b as isize + k;
                    if bb < 0 || bb >= len_minor as isize {
                        continue;
                    }
                    let weight = weights[(k + radius) as usize];
                    sum += weight * src[index(a, bb as usize)];
                    wsum += weight;
                }
                out[index(a, b)] = sum / wsum;
            }
        }
        out
    };
    let horizontal = pass(src, height, width, &|y, x| y * width + x);
    pass(&horizontal, width, height, &|x, y| y * width + x)
}

/// Vertical box blur with shrunken windows at the border.
fn vertical_box_blur(src: &[f64], height: usize, width: usize, half: usize) -> Vec<f64> {
    if half == 0 {
        return src.to_vec();
    }
    let mut out = vec![0f64; src.len()];
    for y in 0..height {
        let y_lo = y.saturating_sub(half);
        let y_hi = (y + half).min(height - 1);
        for x in 0..width {
            let mut sum = 0f64;
            for y2 in y_lo..=y_hi {
                sum += src[y2 * width + x];
            }
            out[y * width + x] = sum / (y_hi - y_lo + 1) as f64;
        }
    }
    out
}

/// Screen-blends a white layer over every channel:
/// `v + weight * layer * (1 - v)`. Output never falls below the input.
fn screen_blend(img: &ImageTensor, layer: &[f64], weight: f64) -> Result<ImageTensor> {
    let plane = img.height() * img.width();
    let data = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v as f64;
            v + weight * layer[i % plane] * (1.0 - v)
        })
        .collect();
    from_f64(img, data)
}

/// Overlays seeded rain streaks: sparse points extruded into oriented
/// lines, Gaussian-blurred, then screen-blended with the given intensity.
pub fn augment_rain(img: &ImageTensor, config: &RainConfig) -> Result<ImageTensor> {
    config.validate()?;
    let (h, w) = (img.height(), img.width());
    let pixels = h * w;
    let streaks = (config.density * pixels as f64 / 1e6).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layer = vec![0f64; pixels];
    let angle = config.angle.to_radians();
    let (dx, dy) = (angle.sin(), angle.cos());
    for _ in 0..streaks {
        let x0: f64 = rng.random_range(0.0..w as f64);
        let y0: f64 = rng.random_range(0.0..h as f64);
        let strength: f64 = rng.random_range(0.5..1.0);
        for t in 0..config.streak_length {
            let x = (x0 + t as f64 * dx).floor();
            let y = (y0 + t as f64 * dy).floor();
            if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                continue;
            }
            let p = y as usize * w + x as usize;
            layer[p] = layer[p].max(strength);
        }
    }
    let blurred = gaussian_blur(&layer, h, w, config.blur_sigma);
    screen_blend(img, &blurred, config.intensity)
}

/// Overlays seeded snow: white discs of varying radius, vertically
/// blurred, over a cold-shifted base image.
pub fn augment_snow(img: &ImageTensor, config: &SnowConfig) -> Result<ImageTensor> {
    config.validate()?;
    if config.cold_shift > 0.0 && img.channels() != 3 {
        return Err(Error::invalid(format!(
            "cold shift needs a 3-channel image, got {} channels",
            img.channels()
        )));
    }
    let (h, w) = (img.height(), img.width());
    let pixels = h * w;
    let particles = (config.particle_density * pixels as f64 / 1e6).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layer = vec![0f64; pixels];
    let (lo, hi) = config.size_range;
    for _ in 0..particles {
        let cx: f64 = rng.random_range(0.0..w as f64);
        let cy: f64 = rng.random_range(0.0..h as f64);
        let r: f64 = if lo == hi { lo } else { rng.random_range(lo..hi) };
        let y_lo = (cy - r).floor().max(0.0) as usize;
        let y_hi = ((cy + r).ceil() as usize).min(h - 1);
        let x_lo = (cx - r).floor().max(0.0) as usize;
        let x_hi = ((cx + r).ceil() as usize).min(w - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let ddx = x as f64 + 0.5 - cx;
                let ddy = y as f64 + 0.5 - cy;
                if ddx * ddx + ddy * ddy <= r * r {
                    layer[y * w + x] = 1.0;
                }
            }
        }
    }
    let blurred = vertical_box_blur(&layer, h, w, config.vertical_blur);
    let mut base = to_f64(img);
    if config.cold_shift > 0.0 {
        let red_scale = 1.0 - config.cold_shift * SNOW_RED_SHIFT;
        let blue_scale = 1.0 + config.cold_shift * SNOW_BLUE_SHIFT;
        for p in 0..pixels {
            base[p] *= red_scale;
            base[2 * pixels + p] *= blue_scale;
        }
    }
    let data = base
        .iter()
        .enumerate()
        .map(|(i, &v)| v + blurred[i % pixels] * (1.0 - v))
        .collect();
    from_f64(img, data)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r1 + m, g1 + m, b1 + m)
}

/// Night tone mapping: brightness multiply, per-channel contrast around
/// the channel mean, then saturation scaling and hue rotation in
/// hue-saturation-value space. The all-neutral config is an exact
/// identity because every stage is skipped.
pub fn augment_night(img: &ImageTensor, config: &NightConfig) -> Result<ImageTensor> {
    config.validate()?;
    let plane = img.height() * img.width();
    let mut data = to_f64(img);
    if config.brightness != 1.0 {
        for v in &mut data {
            *v *= config.brightness;
        }
    }
    if config.contrast != 1.0 {
        for c in 0..img.channels() {
            let channel = &mut data[c * plane..(c + 1) * plane];
            let mean: f64 = channel.iter().sum::<f64>() / plane as f64;
            for v in channel {
                *v = (*v - mean) * config.contrast + mean;
            }
        }
    }
    let hue = config.hue_shift.rem_euclid(360.0);
    if config.saturation != 1.0 || hue != 0.0 {
        if img.channels() != 3 {
            return Err(Error::invalid(format!(
                "saturation and hue adjustments need a 3-channel image, got {} channels",
                img.channels()
            )));
        }
        for p in 0..plane {
            let (r, g, b) = (
                clip01(data[p]),
                clip01(data[plane + p]),
                clip01(data[2 * plane + p]),
            );
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r, g, b) = hsv_to_rgb(h + hue, (s * config.saturation).min(1.0), v);
            data[p] = r;
            data[plane + p] = g;
            data[2 * plane + p] = b;
        }
    }
    from_f64(img, data)
}

fn source_indices(
    op: &GeometricOp,
    height: usize,
    width: usize,
) -> Result<(usize, usize, Vec<usize>)> {
    match *op {
        GeometricOp::HorizontalFlip => {
            let mut src = Vec::with_capacity(height * width);
            for y in 0..height {
                for x in 0..width {
                    src.push(y * width + (width - 1 - x));
                }
            }
            Ok((height, width, src))
        }
        GeometricOp::Rotate90 => {
            let mut src = Vec::with_capacity(height * width);
            for i in 0..width {
                for j in 0..height {
                    src.push(j * width + (width - 1 - i));
                }
            }
            Ok((width, height, src))
        }
        GeometricOp::Crop(rect) => {
            if rect.height == 0 || rect.width == 0 {
                return Err(Error::invalid("crop rectangle must be nonempty"));
            }
            if rect.top + rect.height > height || rect.left + rect.width > width {
                return Err(Error::invalid(format!(
                    "crop rectangle {}x{}+{}+{} exceeds {}x{} image",
                    rect.height, rect.width, rect.top, rect.left, height, width
                )));
            }
            let mut src = Vec::with_capacity(rect.height * rect.width);
            for y in 0..rect.height {
                for x in 0..rect.width {
                    src.push((rect.top + y) * width + rect.left + x);
                }
            }
            Ok((rect.height, rect.width, src))
        }
    }
}

/// Applies a flip, quarter rotation, or crop to an image and, when given,
/// to its label map with exactly the same index mapping (labels are moved,
/// never interpolated).
pub fn geometric(
    img: &ImageTensor,
    gt: Option<&ClassMap>,
    op: &GeometricOp,
) -> Result<(ImageTensor, Option<ClassMap>)> {
    if let Some(gt) = gt {
        check_same_grid(
            (img.height(), img.width()),
            (gt.height(), gt.width()),
            "image and labels",
        )?;
    }
    let (out_h, out_w, src) = source_indices(op, img.height(), img.width())?;
    let plane = img.height() * img.width();
    let mut data = Vec::with_capacity(img.channels() * out_h * out_w);
    for c in 0..img.channels() {
        let channel = &img.data()[c * plane..(c + 1) * plane];
        data.extend(src.iter().map(|&i| channel[i]));
    }
    let out_img = ImageTensor::new(img.channels(), out_h, out_w, data)?;
    let out_gt = match gt {
        Some(gt) => Some(ClassMap::new(
            out_h,
            out_w,
            gt.num_classes(),
            src.iter().map(|&i| gt.data()[i]).collect(),
        )?),
        None => None,
    };
    Ok((out_img, out_gt))
}

/// Fills one seeded axis-aligned rectangle covering about
/// `rect_fraction` of the image area with `fill_value` on every channel.
pub fn cutout(img: &ImageTensor, config: &CutoutConfig) -> Result<ImageTensor> {
    config.validate()?;
    let (h, w) = (img.height(), img.width());
    let side = config.rect_fraction.sqrt();
    let rect_h = ((h as f64 * side).round() as usize).clamp(1, h);
    let rect_w = ((w as f64 * side).round() as usize).clamp(1, w);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let top = rng.random_range(0..=h - rect_h);
    let left = rng.random_range(0..=w - rect_w);
    let mut data = img.data().to_vec();
    let plane = h * w;
    let fill = config.fill_value as f32;
    for c in 0..img.channels() {
        for y in top..top + rect_h {
            let row = c * plane + y * w + left;
            data[row..row + rect_w].fill(fill);
        }
    }
    ImageTensor::new(img.channels(), h, w, data)
}

/// Seeded choice of which corpus images to augment: a uniform sample
/// without replacement of `round(fraction * n)` indices.
pub fn corpus_plan(n_images: usize, fraction: f64, seed: u64) -> Result<BTreeSet<usize>> {
    if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    let k = ((fraction * n_images as f64).round() as usize).min(n_images);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(rand::seq::index::sample(&mut rng, n_images, k).into_iter().collect())
}

/// Per-image seed for parallel corpus runs.
pub fn derive_seed(seed: u64, image_index: usize) -> u64 {
    seed ^ image_index as u64
}
