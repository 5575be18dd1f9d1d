//! Argument structs and implementations for every subcommand. Each struct
//! derives both clap parsing and serde deserialization so pipeline steps
//! and manual invocations share one code path, and every command returns
//! the list of files it wrote.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use crate::augment::{
    augment_night, augment_rain, augment_snow, corpus_plan, cutout, derive_seed, geometric,
    CropRect, CutoutConfig, GeometricOp, NightConfig, RainConfig, SnowConfig,
};
use crate::calibration::{fit_poly_temperature, fit_temperature, FitObjective};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_dataset, Aggregation, EvalConfig};
use crate::fusion::{
    average_probs, bias_disagreement_ood, majority_vote, overlay_fuse, reciprocal_fuse,
    region_normalize, RegionNormConfig, VoteConfig,
};
use crate::io::{
    load_class_map, load_confidence_map, load_image_tensor, load_logit_map,
    load_probability_map, save_class_map, save_confidence_png16, save_confidence_uqt1,
    save_image_png, save_image_uqt1, save_mask_png, save_probability_map, save_scalar_map,
};
use crate::losses::{
    focal_loss, ohem_select, pixel_ce, soft_ce, true_class_prob, FocalConfig, LossMap,
    OhemConfig,
};
use crate::manifest::DatasetManifest;
use crate::metrics::DEFAULT_ECE_BINS;
use crate::sampling::{confidence_filter, sampling_probability, ClassFrequencies};
use crate::scoring::{argmax_prediction, energy_score, energy_to_confidence, msp_confidence,
    ScoreMethod};
use crate::tensor::{ClassMap, ConfidenceMap, ImageTensor, IGNORE_ID};

fn default_ood_ids() -> Vec<u8> {
    vec![IGNORE_ID]
}

fn default_bins() -> usize {
    DEFAULT_ECE_BINS
}

fn default_fraction() -> f64 {
    1.0
}

fn default_top_k() -> usize {
    3
}

/// Rebases a relative path onto `base` (used for paths read from recipe
/// files, which resolve against the recipe's directory).
fn rebase(path: &mut PathBuf, base: &Path) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn rebase_opt(path: &mut Option<PathBuf>, base: &Path) {
    if let Some(p) = path {
        rebase(p, base);
    }
}

/// Creates the parent directory of an output path before writing.
fn prepare_output(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    Ok(())
}

/// Writes a confidence map as 16-bit PNG or UQT1 depending on the output
/// extension.
fn save_confidence_auto(path: &Path, conf: &ConfidenceMap) -> Result<()> {
    prepare_output(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        save_confidence_png16(path, conf)
    } else {
        save_confidence_uqt1(path, conf)
    }
}

fn read_json_config<T: serde::de::DeserializeOwned + Default>(
    path: Option<&PathBuf>,
) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::decode(path, e.to_string()))
        }
    }
}

fn ood_id_set(ids: &[u8]) -> BTreeSet<u8> {
    ids.iter().copied().collect()
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalArgs {
    /// JSON-lines manifest of records to evaluate.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of in-distribution classes.
    #[arg(long)]
    pub num_classes: usize,
    /// Ground-truth ids treated as OOD (comma separated).
    #[arg(long, value_delimiter = ',', default_value = "255")]
    #[serde(default = "default_ood_ids")]
    pub ood_ids: Vec<u8>,
    /// Pool pixels globally or average per-image metrics.
    #[arg(long, value_enum, default_value_t = Aggregation::Global)]
    #[serde(default)]
    pub aggregate: Aggregation,
    /// Number of equal-width calibration bins.
    #[arg(long, default_value_t = DEFAULT_ECE_BINS)]
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Directory receiving report.json and report.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
}

impl EvalArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.manifest, base);
        rebase(&mut self.out_dir, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let manifest =
            DatasetManifest::load(&self.manifest, self.num_classes, ood_id_set(&self.ood_ids))?;
        let config = EvalConfig { aggregation: self.aggregate, num_bins: self.bins };
        let report = evaluate_dataset(&manifest, &config)?;
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))?;
        let json_path = self.out_dir.join("report.json");
        let csv_path = self.out_dir.join("report.csv");
        report.write_json(&json_path)?;
        report.write_csv(&csv_path)?;
        print!("{}", report.to_table_string());
        Ok(vec![json_path, csv_path])
    }
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreArgs {
    /// Confidence scoring method.
    #[arg(long, value_enum, default_value_t = ScoreMethod::Msp)]
    #[serde(default)]
    pub method: ScoreMethod,
    /// Input logit tensor (UQT1, classes x height x width).
    #[arg(long)]
    pub logits: PathBuf,
    /// Output prediction map (8-bit PNG).
    #[arg(long)]
    pub out_pred: PathBuf,
    /// Output confidence map (UQT1 or 16-bit PNG by extension).
    #[arg(long)]
    pub out_conf: PathBuf,
    /// Optional output for the unnormalized energy field (UQT1).
    #[arg(long)]
    #[serde(default)]
    pub raw_energy: Option<PathBuf>,
}

impl ScoreArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.logits, base);
        rebase(&mut self.out_pred, base);
        rebase(&mut self.out_conf, base);
        rebase_opt(&mut self.raw_energy, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        if self.raw_energy.is_some() && self.method != ScoreMethod::Energy {
            return Err(Error::usage("--raw-energy requires --method energy"));
        }
        let logits = load_logit_map(&self.logits)?;
        let pred = argmax_prediction(&logits)?;
        let conf = match self.method {
            ScoreMethod::Msp => msp_confidence(&logits)?,
            ScoreMethod::Energy => energy_to_confidence(&energy_score(&logits)?)?,
        };
        prepare_output(&self.out_pred)?;
        save_class_map(&self.out_pred, &pred)?;
        save_confidence_auto(&self.out_conf, &conf)?;
        let mut produced = vec![self.out_pred.clone(), self.out_conf.clone()];
        if let Some(raw_path) = &self.raw_energy {
            prepare_output(raw_path)?;
            save_scalar_map(raw_path, &energy_score(&logits)?)?;
            produced.push(raw_path.clone());
        }
        Ok(produced)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CalibrateMethod {
    Ts,
    Pts,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateArgs {
    /// Plain or polynomial temperature scaling.
    #[arg(long, value_enum)]
    pub method: CalibrateMethod,
    /// Validation manifest; every record needs a logits tensor.
    #[arg(long)]
    pub val_manifest: PathBuf,
    /// Number of in-distribution classes.
    #[arg(long)]
    pub num_classes: usize,
    /// Fitting objective.
    #[arg(long, value_enum, default_value_t = FitObjective::Ece)]
    #[serde(default)]
    pub objective: FitObjective,
    /// Output JSON file for the fitted parameters.
    #[arg(long)]
    pub out_params: PathBuf,
}

impl CalibrateArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.val_manifest, base);
        rebase(&mut self.out_params, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let manifest = DatasetManifest::load(
            &self.val_manifest,
            self.num_classes,
            BTreeSet::from([IGNORE_ID]),
        )?;
        let mut logits = Vec::with_capacity(manifest.records.len());
        let mut labels = Vec::with_capacity(manifest.records.len());
        for (index, record) in manifest.records.iter().enumerate() {
            let path = record.logits.as_ref().ok_or_else(|| {
                Error::usage(format!("record {index} has no logits, calibration needs them"))
            })?;
            logits.push(load_logit_map(path)?);
            labels.push(load_class_map(&record.gt)?.with_num_classes(self.num_classes)?);
        }
        let json = match self.method {
            CalibrateMethod::Ts => {
                let params = fit_temperature(&logits, &labels, self.objective)?;
                serde_json::to_string_pretty(&params)
            }
            CalibrateMethod::Pts => {
                let params = fit_poly_temperature(&logits, &labels, self.objective)?;
                serde_json::to_string_pretty(&params)
            }
        }
        .map_err(|e| Error::invalid(format!("cannot serialize parameters: {e}")))?;
        prepare_output(&self.out_params)?;
        fs::write(&self.out_params, json.clone() + "\n")
            .map_err(|e| Error::io(&self.out_params, e))?;
        println!("{json}");
        Ok(vec![self.out_params.clone()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FuseOp {
    Avg,
    Vote,
    Recip,
    Overlay,
    Regionnorm,
    Biasood,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseArgs {
    /// Fusion operation; each operation uses its own subset of flags.
    #[arg(long, value_enum)]
    pub op: FuseOp,
    /// avg: input probability tensors (UQT1).
    #[arg(long, num_args = 1.., value_name = "UQT1")]
    #[serde(default)]
    pub probs: Vec<PathBuf>,
    /// avg: output probability tensor.
    #[arg(long)]
    #[serde(default)]
    pub out_probs: Option<PathBuf>,
    /// vote: input prediction maps (PNG).
    #[arg(long, num_args = 1.., value_name = "PNG")]
    #[serde(default)]
    pub preds: Vec<PathBuf>,
    /// vote: model whose prediction wins ties.
    #[arg(long)]
    #[serde(default)]
    pub preferred: Option<usize>,
    /// vote: output prediction map; biasood reuses it for nothing.
    #[arg(long)]
    #[serde(default)]
    pub out_pred: Option<PathBuf>,
    /// recip: first confidence map.
    #[arg(long)]
    #[serde(default)]
    pub conf_a: Option<PathBuf>,
    /// recip: second confidence map.
    #[arg(long)]
    #[serde(default)]
    pub conf_b: Option<PathBuf>,
    /// overlay: confidence map kept where the overlay is confident.
    #[arg(long)]
    #[serde(default)]
    pub background: Option<PathBuf>,
    /// overlay: confidence map spliced in where it is low.
    #[arg(long)]
    #[serde(default)]
    pub overlay: Option<PathBuf>,
    /// overlay: splice threshold.
    #[arg(long)]
    #[serde(default)]
    pub threshold: Option<f64>,
    /// regionnorm: input confidence map.
    #[arg(long)]
    #[serde(default)]
    pub conf: Option<PathBuf>,
    /// regionnorm: JSON config file.
    #[arg(long)]
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// recip/overlay/regionnorm: output confidence map.
    #[arg(long)]
    #[serde(default)]
    pub out_conf: Option<PathBuf>,
    /// biasood: first model's prediction map.
    #[arg(long)]
    #[serde(default)]
    pub pred_a: Option<PathBuf>,
    /// biasood: second model's prediction map.
    #[arg(long)]
    #[serde(default)]
    pub pred_b: Option<PathBuf>,
    /// biasood: bias class of the first model.
    #[arg(long)]
    #[serde(default)]
    pub bias_a: Option<u8>,
    /// biasood: bias class of the second model.
    #[arg(long)]
    #[serde(default)]
    pub bias_b: Option<u8>,
    /// biasood: output mask (PNG).
    #[arg(long)]
    #[serde(default)]
    pub out_mask: Option<PathBuf>,
}

impl FuseArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        for p in &mut self.probs {
            rebase(p, base);
        }
        for p in &mut self.preds {
            rebase(p, base);
        }
        for p in [
            &mut self.out_probs,
            &mut self.out_pred,
            &mut self.conf_a,
            &mut self.conf_b,
            &mut self.background,
            &mut self.overlay,
            &mut self.conf,
            &mut self.config,
            &mut self.out_conf,
            &mut self.pred_a,
            &mut self.pred_b,
            &mut self.out_mask,
        ] {
            rebase_opt(p, base);
        }
    }

    /// Checks that exactly the flags of the selected operation are set.
    fn check_flags(&self) -> Result<()> {
        let allowed: &[&str] = match self.op {
            FuseOp::Avg => &["probs", "out_probs"],
            FuseOp::Vote => &["preds", "preferred", "out_pred"],
            FuseOp::Recip => &["conf_a", "conf_b", "out_conf"],
            FuseOp::Overlay => &["background", "overlay", "threshold", "out_conf"],
            FuseOp::Regionnorm => &["conf", "config", "out_conf"],
            FuseOp::Biasood => &["pred_a", "pred_b", "bias_a", "bias_b", "out_mask"],
        };
        let set: &[(&str, bool)] = &[
            ("probs", !self.probs.is_empty()),
            ("out_probs", self.out_probs.is_some()),
            ("preds", !self.preds.is_empty()),
            ("preferred", self.preferred.is_some()),
            ("out_pred", self.out_pred.is_some()),
            ("conf_a", self.conf_a.is_some()),
            ("conf_b", self.conf_b.is_some()),
            ("background", self.background.is_some()),
            ("overlay", self.overlay.is_some()),
            ("threshold", self.threshold.is_some()),
            ("conf", self.conf.is_some()),
            ("config", self.config.is_some()),
            ("out_conf", self.out_conf.is_some()),
            ("pred_a", self.pred_a.is_some()),
            ("pred_b", self.pred_b.is_some()),
            ("bias_a", self.bias_a.is_some()),
            ("bias_b", self.bias_b.is_some()),
            ("out_mask", self.out_mask.is_some()),
        ];
        for &(name, is_set) in set {
            if is_set && !allowed.contains(&name) {
                return Err(Error::usage(format!(
                    "flag --{} does not apply to this fusion operation",
                    name.replace('_', "-")
                )));
            }
        }
        Ok(())
    }

    fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a PathBuf> {
        field
            .as_ref()
            .ok_or_else(|| Error::usage(format!("missing required flag --{name}")))
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        self.check_flags()?;
        match self.op {
            FuseOp::Avg => {
                if self.probs.is_empty() {
                    return Err(Error::usage("missing required flag --probs"));
                }
                let out = self.require(&self.out_probs, "out-probs")?;
                let maps = self
                    .probs
                    .iter()
                    .map(load_probability_map)
                    .collect::<Result<Vec<_>>>()?;
                let fused = average_probs(&maps)?;
                prepare_output(out)?;
                save_probability_map(out, &fused)?;
                Ok(vec![out.clone()])
            }
            FuseOp::Vote => {
                if self.preds.is_empty() {
                    return Err(Error::usage("missing required flag --preds"));
                }
                let out = self.require(&self.out_pred, "out-pred")?;
                let maps = self
                    .preds
                    .iter()
                    .map(load_class_map)
                    .collect::<Result<Vec<_>>>()?;
                let num_classes = maps.iter().map(ClassMap::num_classes).max().unwrap_or(1);
                let maps = maps
                    .into_iter()
                    .map(|m| m.with_num_classes(num_classes))
                    .collect::<Result<Vec<_>>>()?;
                let config = VoteConfig { preferred_model: self.preferred.unwrap_or(0) };
                let voted = majority_vote(&maps, &config)?;
                prepare_output(out)?;
                save_class_map(out, &voted)?;
                Ok(vec![out.clone()])
            }
            FuseOp::Recip => {
                let a = load_confidence_map(self.require(&self.conf_a, "conf-a")?)?;
                let b = load_confidence_map(self.require(&self.conf_b, "conf-b")?)?;
                let out = self.require(&self.out_conf, "out-conf")?;
                let fused = reciprocal_fuse(&a, &b)?;
                save_confidence_auto(out, &fused)?;
                Ok(vec![out.clone()])
            }
            FuseOp::Overlay => {
                let background =
                    load_confidence_map(self.require(&self.background, "background")?)?;
                let overlay = load_confidence_map(self.require(&self.overlay, "overlay")?)?;
                let out = self.require(&self.out_conf, "out-conf")?;
                let fused = overlay_fuse(&background, &overlay, self.threshold.unwrap_or(0.6))?;
                save_confidence_auto(out, &fused)?;
                Ok(vec![out.clone()])
            }
            FuseOp::Regionnorm => {
                let conf = load_confidence_map(self.require(&self.conf, "conf")?)?;
                let out = self.require(&self.out_conf, "out-conf")?;
                let config: RegionNormConfig = read_json_config(self.config.as_ref())?;
                let fused = region_normalize(&conf, &config)?;
                save_confidence_auto(out, &fused)?;
                Ok(vec![out.clone()])
            }
            FuseOp::Biasood => {
                let pred_a = load_class_map(self.require(&self.pred_a, "pred-a")?)?;
                let pred_b = load_class_map(self.require(&self.pred_b, "pred-b")?)?;
                let bias_a = self
                    .bias_a
                    .ok_or_else(|| Error::usage("missing required flag --bias-a"))?;
                let bias_b = self
                    .bias_b
                    .ok_or_else(|| Error::usage("missing required flag --bias-b"))?;
                let out = self.require(&self.out_mask, "out-mask")?;
                let mask = bias_disagreement_ood(&pred_a, &pred_b, bias_a, bias_b)?;
                prepare_output(out)?;
                save_mask_png(out, &mask)?;
                Ok(vec![out.clone()])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AugmentKind {
    Rain,
    Snow,
    Night,
    Cutout,
    Flip,
    Rot90,
    Crop,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentArgs {
    /// Augmentation to apply.
    #[arg(long, value_enum)]
    pub kind: AugmentKind,
    /// JSON config for the chosen kind (defaults when omitted); crop
    /// requires one with top/left/height/width.
    #[arg(long)]
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Base seed; each image uses seed XOR its index in sorted order.
    #[arg(long, default_value_t = 0)]
    #[serde(default)]
    pub seed: u64,
    /// Input directory of images (PNG or UQT1).
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Output directory; unselected images are copied through unchanged.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of images to augment, sampled without replacement.
    #[arg(long, default_value_t = 1.0)]
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    /// Directory of label maps matched by file name (flip/rot90/crop only).
    #[arg(long)]
    #[serde(default)]
    pub labels: Option<PathBuf>,
    /// Output directory for transformed label maps.
    #[arg(long)]
    #[serde(default)]
    pub out_labels: Option<PathBuf>,
}

impl AugmentArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase_opt(&mut self.config, base);
        rebase(&mut self.input, base);
        rebase(&mut self.out, base);
        rebase_opt(&mut self.labels, base);
        rebase_opt(&mut self.out_labels, base);
    }

    fn is_geometric(&self) -> bool {
        matches!(self.kind, AugmentKind::Flip | AugmentKind::Rot90 | AugmentKind::Crop)
    }

    fn geometric_op(&self) -> Result<GeometricOp> {
        Ok(match self.kind {
            AugmentKind::Flip => GeometricOp::HorizontalFlip,
            AugmentKind::Rot90 => GeometricOp::Rotate90,
            AugmentKind::Crop => {
                let path = self.config.as_ref().ok_or_else(|| {
                    Error::usage("crop needs --config with top/left/height/width")
                })?;
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let rect: CropRect = serde_json::from_str(&text)
                    .map_err(|e| Error::decode(path, e.to_string()))?;
                GeometricOp::Crop(rect)
            }
            _ => unreachable!("only geometric kinds"),
        })
    }

    fn apply_pixel_kind(&self, img: &ImageTensor, seed: u64) -> Result<ImageTensor> {
        match self.kind {
            AugmentKind::Rain => {
                let config: RainConfig = read_json_config(self.config.as_ref())?;
                augment_rain(img, &RainConfig { seed, ..config })
            }
            AugmentKind::Snow => {
                let config: SnowConfig = read_json_config(self.config.as_ref())?;
                augment_snow(img, &SnowConfig { seed, ..config })
            }
            AugmentKind::Night => {
                let config: NightConfig = read_json_config(self.config.as_ref())?;
                augment_night(img, &config)
            }
            AugmentKind::Cutout => {
                let config: CutoutConfig = read_json_config(self.config.as_ref())?;
                cutout(img, &CutoutConfig { seed, ..config })
            }
            _ => unreachable!("geometric kinds handled separately"),
        }
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        if !self.fraction.is_finite() || !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::usage(format!(
                "--fraction must be in [0, 1], got {}",
                self.fraction
            )));
        }
        if (self.labels.is_some() || self.out_labels.is_some()) && !self.is_geometric() {
            return Err(Error::usage("--labels applies only to flip, rot90, and crop"));
        }
        if self.labels.is_some() != self.out_labels.is_some() {
            return Err(Error::usage("--labels and --out-labels go together"));
        }
        if self.is_geometric() {
            // Fail on bad crop rectangles before touching any file.
            self.geometric_op()?;
        }
        let mut names: Vec<String> = fs::read_dir(&self.input)
            .map_err(|e| Error::io(&self.input, e))?
            .filter_map(|entry| entry.ok())
            .filter(|entry| entry.path().is_file())
            .filter_map(|entry| entry.file_name().into_string().ok())
            .filter(|name| {
                let lower = name.to_ascii_lowercase();
                lower.ends_with(".png") || lower.ends_with(".uqt1")
            })
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::usage(format!(
                "no .png or .uqt1 images in {}",
                self.input.display()
            )));
        }
        let selected = corpus_plan(names.len(), self.fraction, self.seed)?;
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        if let Some(out_labels) = &self.out_labels {
            fs::create_dir_all(out_labels).map_err(|e| Error::io(out_labels, e))?;
        }
        let mut produced = Vec::new();
        for (index, name) in names.iter().enumerate() {
            let in_path = self.input.join(name);
            let out_path = self.out.join(name);
            let augment_this = selected.contains(&index);
            let img = load_image_tensor(&in_path)?;
            let gt = match (&self.labels, augment_this) {
                (Some(labels_dir), true) => Some(load_class_map(labels_dir.join(name))?),
                _ => None,
            };
            let (out_img, out_gt) = if !augment_this {
                (img, None)
            } else if self.is_geometric() {
                let (img, gt) = geometric(&img, gt.as_ref(), &self.geometric_op()?)?;
                (img, gt)
            } else {
                (self.apply_pixel_kind(&img, derive_seed(self.seed, index))?, None)
            };
            if name.to_ascii_lowercase().ends_with(".png") {
                save_image_png(&out_path, &out_img)?;
            } else {
                save_image_uqt1(&out_path, &out_img)?;
            }
            produced.push(out_path);
            if let (Some(out_labels), Some(gt)) = (&self.out_labels, out_gt) {
                let label_path = out_labels.join(name);
                save_class_map(&label_path, &gt)?;
                produced.push(label_path);
            }
        }
        Ok(produced)
    }
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptArgs {
    /// Directory with the running (training-time) statistics.
    #[arg(long)]
    pub running: PathBuf,
    /// Directory with the instance (test-time) statistics.
    #[arg(long)]
    pub instance: PathBuf,
    /// Optional JSON output for the mixing coefficient.
    #[arg(long)]
    #[serde(default)]
    pub out_alpha: Option<PathBuf>,
    /// Optional directory for the blended statistics.
    #[arg(long)]
    #[serde(default)]
    pub out_stats: Option<PathBuf>,
}

impl AdaptArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.running, base);
        rebase(&mut self.instance, base);
        rebase_opt(&mut self.out_alpha, base);
        rebase_opt(&mut self.out_stats, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let running = crate::adapt::load_feature_stats(&self.running)?;
        let instance = crate::adapt::load_feature_stats(&self.instance)?;
        let alpha = crate::adapt::mixing_coefficient(&running, &instance)?;
        println!("alpha: {}", alpha.alpha);
        let mut produced = Vec::new();
        if let Some(path) = &self.out_alpha {
            prepare_output(path)?;
            let json = format!("{{\n  \"alpha\": {}\n}}\n", alpha.alpha);
            fs::write(path, json).map_err(|e| Error::io(path, e))?;
            produced.push(path.clone());
        }
        if let Some(dir) = &self.out_stats {
            let mixed = crate::adapt::mix_stats(&running, &instance, &alpha)?;
            crate::adapt::save_feature_stats(dir, &mixed)?;
            produced.push(dir.join("index.json"));
        }
        Ok(produced)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Ce,
    Ohem,
    Focal,
    Softce,
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossArgs {
    /// Loss to compute.
    #[arg(long, value_enum)]
    pub kind: LossKind,
    /// Input logit tensor (UQT1).
    #[arg(long)]
    pub logits: PathBuf,
    /// Ground-truth label map (PNG); softce one-hot encodes it unless
    /// --targets is given.
    #[arg(long)]
    pub gt: PathBuf,
    /// JSON config (ohem and focal).
    #[arg(long)]
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// softce: explicit soft targets (UQT1, classes x height x width).
    #[arg(long)]
    #[serde(default)]
    pub targets: Option<PathBuf>,
    /// Optional per-pixel loss map output (UQT1; ignored pixels are zero).
    #[arg(long)]
    #[serde(default)]
    pub out_map: Option<PathBuf>,
    /// ohem: optional selection mask output (PNG).
    #[arg(long)]
    #[serde(default)]
    pub out_mask: Option<PathBuf>,
}

impl LossArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.logits, base);
        rebase(&mut self.gt, base);
        rebase_opt(&mut self.config, base);
        rebase_opt(&mut self.targets, base);
        rebase_opt(&mut self.out_map, base);
        rebase_opt(&mut self.out_mask, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        if self.out_mask.is_some() && self.kind != LossKind::Ohem {
            return Err(Error::usage("--out-mask applies only to --kind ohem"));
        }
        if self.targets.is_some() && self.kind != LossKind::Softce {
            return Err(Error::usage("--targets applies only to --kind softce"));
        }
        if self.config.is_some() && !matches!(self.kind, LossKind::Ohem | LossKind::Focal) {
            return Err(Error::usage("--config applies only to ohem and focal"));
        }
        let logits = load_logit_map(&self.logits)?;
        let gt = load_class_map(&self.gt)?;
        let mut produced = Vec::new();
        let (scalar, map) = match self.kind {
            LossKind::Ce => {
                let losses = pixel_ce(&logits, &gt, IGNORE_ID)?;
                (losses.mean().unwrap_or(0.0), losses.to_scalar_map())
            }
            LossKind::Ohem => {
                let config: OhemConfig = read_json_config(self.config.as_ref())?;
                let losses = pixel_ce(&logits, &gt, config.ignore_id)?;
                let (mask, scalar) = ohem_select(&losses, &config)?;
                if let Some(path) = &self.out_mask {
                    prepare_output(path)?;
                    save_mask_png(path, &mask)?;
                    produced.push(path.clone());
                }
                (scalar, losses.to_scalar_map())
            }
            LossKind::Focal => {
                let config: FocalConfig = read_json_config(self.config.as_ref())?;
                let probs = true_class_prob(&logits, &gt, IGNORE_ID)?;
                let (losses, clamped) = focal_loss(&probs, &config)?;
                if clamped > 0 {
                    eprintln!("warning: clamped {clamped} zero probabilities");
                }
                let valid: Vec<bool> =
                    gt.data().iter().map(|&id| id != IGNORE_ID).collect();
                let map = LossMap::new(
                    losses.height(),
                    losses.width(),
                    losses.data().to_vec(),
                    valid,
                )?;
                (map.mean().unwrap_or(0.0), map.to_scalar_map())
            }
            LossKind::Softce => {
                let targets = match &self.targets {
                    Some(path) => load_probability_map(path)?,
                    None => one_hot_targets(&logits, &gt)?,
                };
                let losses = soft_ce(&logits, &targets)?;
                let valid: Vec<bool> =
                    gt.data().iter().map(|&id| id != IGNORE_ID).collect();
                let map = LossMap::new(
                    losses.height(),
                    losses.width(),
                    losses.data().to_vec(),
                    valid,
                )?;
                (map.mean().unwrap_or(0.0), map.to_scalar_map())
            }
        };
        println!("{scalar}");
        if let Some(path) = &self.out_map {
            prepare_output(path)?;
            save_scalar_map(path, &map)?;
            produced.push(path.clone());
        }
        Ok(produced)
    }
}

/// One-hot probability targets from a label map; ignored pixels get a
/// uniform distribution (their loss is excluded from the mean anyway).
fn one_hot_targets(
    logits: &crate::tensor::LogitMap,
    gt: &ClassMap,
) -> Result<crate::tensor::ProbabilityMap> {
    let num_classes = logits.num_classes();
    let pixels = logits.pixel_count();
    let mut data = vec![0f32; num_classes * pixels];
    let uniform = 1.0 / num_classes as f32;
    for (p, &id) in gt.data().iter().enumerate() {
        if id == IGNORE_ID {
            for c in 0..num_classes {
                data[c * pixels + p] = uniform;
            }
        } else if (id as usize) < num_classes {
            data[id as usize * pixels + p] = 1.0;
        } else {
            return Err(Error::invalid(format!(
                "label {id} at pixel {p} exceeds {num_classes} classes"
            )));
        }
    }
    crate::tensor::ProbabilityMap::new(num_classes, logits.height(), logits.width(), data)
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplePlanArgs {
    /// JSON array of per-class dataset frequencies.
    #[arg(long)]
    pub freqs: PathBuf,
    /// Class the plan is biased toward.
    #[arg(long)]
    pub bias: usize,
}

impl SamplePlanArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.freqs, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let text = fs::read_to_string(&self.freqs).map_err(|e| Error::io(&self.freqs, e))?;
        let freqs: Vec<f64> = serde_json::from_str(&text)
            .map_err(|e| Error::decode(&self.freqs, e.to_string()))?;
        let freqs = ClassFrequencies::new(freqs)?;
        let inclusion = sampling_probability(&freqs, self.bias)?;
        let json = serde_json::to_string(&inclusion)
            .map_err(|e| Error::invalid(format!("cannot serialize plan: {e}")))?;
        println!("{json}");
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfFilterArgs {
    /// Confidence map (UQT1 or 16-bit PNG).
    #[arg(long)]
    pub conf: PathBuf,
    /// Predicted label map (PNG).
    #[arg(long)]
    pub pred: PathBuf,
    /// Number of widest-spread classes to filter.
    #[arg(long, default_value_t = 3)]
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Output mask (PNG, white = filtered out).
    #[arg(long)]
    pub out: PathBuf,
}

impl ConfFilterArgs {
    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(&mut self.conf, base);
        rebase(&mut self.pred, base);
        rebase(&mut self.out, base);
    }

    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let conf = load_confidence_map(&self.conf)?;
        let pred = load_class_map(&self.pred)?;
        let mask = confidence_filter(&conf, &pred, self.top_k)?;
        prepare_output(&self.out)?;
        save_mask_png(&self.out, &mask)?;
        Ok(vec![self.out.clone()])
    }
}
