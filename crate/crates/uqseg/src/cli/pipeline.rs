//! Multi-step recipes. A recipe is a JSON file with named steps, each
//! carrying the arguments of one subcommand. Every step is validated
//! before any step runs, so a typo in step 7 cannot leave steps 1..6
//! half-written on disk. Relative paths inside a recipe resolve against
//! the recipe file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

use super::commands::{
    AdaptArgs, AugmentArgs, CalibrateArgs, ConfFilterArgs, EvalArgs, FuseArgs, LossArgs,
    SamplePlanArgs, ScoreArgs,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecipe {
    steps: Vec<RawStep>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStep {
    name: String,
    op: String,
    #[serde(default)]
    args: serde_json::Value,
}

#[derive(Debug)]
pub enum StepArgs {
    Eval(EvalArgs),
    Score(ScoreArgs),
    Calibrate(CalibrateArgs),
    Fuse(FuseArgs),
    Augment(AugmentArgs),
    Adapt(AdaptArgs),
    Loss(LossArgs),
    SamplePlan(SamplePlanArgs),
    ConfFilter(ConfFilterArgs),
}

#[derive(Debug)]
pub struct Step {
    pub name: String,
    pub args: StepArgs,
}

#[derive(Debug)]
pub struct Recipe {
    pub steps: Vec<Step>,
}

fn parse_args<T: serde::de::DeserializeOwned>(step: &RawStep) -> Result<T> {
    serde_json::from_value(step.args.clone()).map_err(|e| {
        Error::usage(format!("step {}: bad arguments: {e}", step.name))
    })
}

impl Recipe {
    /// Parses and fully validates a recipe file: unique nonempty step
    /// names, known operations, and arguments that deserialize into the
    /// matching subcommand's argument struct.
    pub fn load(path: &Path) -> Result<Recipe> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: RawRecipe = serde_json::from_str(&text)
            .map_err(|e| Error::decode(path, e.to_string()))?;
        if raw.steps.is_empty() {
            return Err(Error::usage(format!("empty recipe: {}", path.display())));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut seen = std::collections::BTreeSet::new();
        let mut steps = Vec::with_capacity(raw.steps.len());
        for raw_step in &raw.steps {
            if raw_step.name.is_empty() {
                return Err(Error::usage("recipe steps need nonempty names"));
            }
            if !seen.insert(raw_step.name.clone()) {
                return Err(Error::usage(format!(
                    "duplicate step name: {}",
                    raw_step.name
                )));
            }
            let args = match raw_step.op.as_str() {
                "eval" => {
                    let mut a: EvalArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Eval(a)
                }
                "score" => {
                    let mut a: ScoreArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Score(a)
                }
                "calibrate" => {
                    let mut a: CalibrateArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Calibrate(a)
                }
                "fuse" => {
                    let mut a: FuseArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Fuse(a)
                }
                "augment" => {
                    let mut a: AugmentArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Augment(a)
                }
                "adapt" => {
                    let mut a: AdaptArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Adapt(a)
                }
                "loss" => {
                    let mut a: LossArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::Loss(a)
                }
                "sample-plan" => {
                    let mut a: SamplePlanArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::SamplePlan(a)
                }
                "conf-filter" => {
                    let mut a: ConfFilterArgs = parse_args(raw_step)?;
                    a.rebase_paths(&base);
                    StepArgs::ConfFilter(a)
                }
                other => {
                    return Err(Error::usage(format!(
                        "step {}: unknown operation: {other}",
                        raw_step.name
                    )));
                }
            };
            steps.push(Step { name: raw_step.name.clone(), args });
        }
        Ok(Recipe { steps })
    }

    /// Runs the steps in order, stopping at the first failure. Returns
    /// every file the executed steps produced.
    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let mut produced = Vec::new();
        for step in &self.steps {
            let result = match &step.args {
                StepArgs::Eval(a) => a.run(),
                StepArgs::Score(a) => a.run(),
                StepArgs::Calibrate(a) => a.run(),
                StepArgs::Fuse(a) => a.run(),
                StepArgs::Augment(a) => a.run(),
                StepArgs::Adapt(a) => a.run(),
                StepArgs::Loss(a) => a.run(),
                StepArgs::SamplePlan(a) => a.run(),
                StepArgs::ConfFilter(a) => a.run(),
            };
            produced.extend(result.map_err(|e| Error::step(&step.name, e))?);
        }
        Ok(produced)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct PipelineArgs {
    /// Recipe file (JSON with a "steps" array of {name, op, args}).
    #[arg(long)]
    pub recipe: PathBuf,
    /// Optional file receiving the produced-files manifest as JSON.
    #[arg(long)]
    pub out_files: Option<PathBuf>,
}

impl PipelineArgs {
    pub fn run(&self) -> Result<Vec<PathBuf>> {
        let recipe = Recipe::load(&self.recipe)?;
        let produced = recipe.run()?;
        let listing: Vec<String> =
            produced.iter().map(|p| p.display().to_string()).collect();
        let manifest = serde_json::json!({ "produced": listing });
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::invalid(format!("cannot serialize manifest: {e}")))?;
        println!("{json}");
        let mut all = produced;
        if let Some(path) = &self.out_files {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
            }
            fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
            all.push(path.clone());
        }
        Ok(all)
    }
}
