//! Uncertainty quantification for semantic segmentation.
//!
//! The crate covers everything that happens after a segmentation network
//! has produced its raw outputs: scoring confidence, calibrating it,
//! fusing several models, flagging out-of-distribution regions, scoring
//! the whole dataset, and preparing robust training runs. All of it
//! operates on serialized tensors (a small binary format plus PNG label
//! maps), so no deep-learning framework is required.
//!
//! The best starting points are the runnable examples, one per major
//! capability (`cargo run --example <name>`):
//!
//! - `evaluate_metrics`: dataset evaluation with pooled or per-image
//!   aggregation ([`evaluate`]).
//! - `ood_scoring`: softmax and energy confidence scoring ([`scoring`],
//!   [`metrics`]).
//! - `calibrate_temperature`: plain and polynomial temperature fitting,
//!   plus the mask-classification reduction ([`calibration`]).
//! - `adapt_stats`: drift-weighted blending of feature statistics
//!   ([`adapt`]).
//! - `robust_losses`: cross entropy with hard-example mining, focal, and
//!   soft-target variants ([`losses`]).
//! - `ensemble_fusion`: probability averaging, voting, reciprocal and
//!   overlay fusion, region flattening, bias disagreement ([`fusion`]).
//! - `sampling_plan`: rarity-biased sampling, pseudo-label filtering,
//!   teacher averaging ([`sampling`]).
//! - `weather_augmentation`: seeded rain, snow, night, cutout, and
//!   geometric transforms ([`augment`]).
//! - `full_pipeline`: a multi-step recipe from raw confidence maps to an
//!   evaluated, fused result ([`cli`], [`synthetic`]).
//!
//! The same functionality ships as the `uqseg` binary with one
//! subcommand per capability; `uqseg pipeline` chains them from a recipe
//! file. File formats live in [`io`] and [`manifest`].

pub mod adapt;
pub mod augment;
pub mod calibration;
pub mod cli;
pub mod error;
pub mod evaluate;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod sampling;
pub mod scoring;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
