//! Command-line interface. Every subcommand is a thin wrapper over the
//! library: parse flags, load tensors, call one function, write results.
//! Outputs are byte-identical across runs and thread counts.

pub mod commands;
pub mod pipeline;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

pub use commands::{
    AdaptArgs, AugmentArgs, AugmentKind, CalibrateArgs, CalibrateMethod, ConfFilterArgs,
    EvalArgs, FuseArgs, FuseOp, LossArgs, LossKind, SamplePlanArgs, ScoreArgs,
};
pub use pipeline::{PipelineArgs, Recipe};

#[derive(Debug, Parser)]
#[command(
    name = "uqseg",
    version,
    about = "Uncertainty toolkit for semantic segmentation on serialized tensors"
)]
pub struct Cli {
    /// Worker threads; 0 means one per CPU. The UQSEG_THREADS environment
    /// variable overrides this flag.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate predictions against ground truth and write metric reports.
    Eval(EvalArgs),
    /// Turn a logit tensor into a prediction map and a confidence map.
    Score(ScoreArgs),
    /// Fit temperature parameters on a validation manifest.
    Calibrate(CalibrateArgs),
    /// Combine maps from several models into one.
    Fuse(FuseArgs),
    /// Apply a weather or geometric augmentation to a directory of images.
    Augment(AugmentArgs),
    /// Blend running and instance feature statistics.
    Adapt(AdaptArgs),
    /// Compute a segmentation loss for a logit tensor and label map.
    Loss(LossArgs),
    /// Print class-inclusion probabilities for biased dataset sampling.
    SamplePlan(SamplePlanArgs),
    /// Mask low-confidence pixels of the widest-spread predicted classes.
    ConfFilter(ConfFilterArgs),
    /// Run a JSON recipe of named steps, validating all of them first.
    Pipeline(PipelineArgs),
}

/// Resolves the worker-thread count: the environment variable wins over
/// the flag, and 0 keeps the default of one thread per CPU.
pub fn thread_count(flag: usize) -> Result<usize> {
    match std::env::var("UQSEG_THREADS") {
        Ok(value) => value.trim().parse().map_err(|_| {
            Error::usage(format!("UQSEG_THREADS must be a nonnegative integer, got {value:?}"))
        }),
        Err(std::env::VarError::NotPresent) => Ok(flag),
        Err(e) => Err(Error::usage(format!("UQSEG_THREADS is not valid unicode: {e}"))),
    }
}

/// Runs the parsed command, returning the files it produced.
pub fn run(cli: &Cli) -> Result<Vec<std::path::PathBuf>> {
    let threads = thread_count(cli.threads)?;
    if threads > 0 {
        // Ignore the error if a global pool already exists (tests call
        // run() repeatedly in one process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Eval(args) => args.run(),
        Command::Score(args) => args.run(),
        Command::Calibrate(args) => args.run(),
        Command::Fuse(args) => args.run(),
        Command::Augment(args) => args.run(),
        Command::Adapt(args) => args.run(),
        Command::Loss(args) => args.run(),
        Command::SamplePlan(args) => args.run(),
        Command::ConfFilter(args) => args.run(),
        Command::Pipeline(args) => args.run(),
    }
}

/// Prints an error the way the binary reports it: step context first,
/// then per-record diagnostics if present.
pub fn report_error(err: &Error) {
    match err {
        Error::Records(items) => {
            eprintln!("error: {} record(s) failed", items.len());
            for (index, e) in items {
                eprintln!("  record {index}: {e}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}
