use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stepframe::generation::Target;
use stepframe::ingest::{DatasetTag, SelectionStrategy};

use crate::config::BackendMode;

#[derive(Debug, Parser)]
#[command(
    name = "stepframe",
    version,
    about = "Curate, ground, generate and evaluate action frames"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "STEPFRAME_CONFIG")]
    pub config: Option<PathBuf>,
    /// Worker threads for per-triplet work; all cores when omitted.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Use the deterministic mocks or the configured remote services.
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendMode>,
    /// Directory holding the mock fixtures (`vlm.json`, `detector.json`).
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse annotations, pick timestamps and extract frames.
    Curate(CurateArgs),
    /// Keep triplets whose frames show hands and relevant objects.
    Filter(FilterArgs),
    /// Compare automatic triplets with a hand-picked benchmark.
    ScoreCuration(ScoreCurationArgs),
    /// Categorise relevant objects and build inpainting masks.
    Ground(GroundArgs),
    /// Run masked inpainting for the action and/or final frame.
    Generate(GenerateArgs),
    /// Score generated frames against ground truth.
    Evaluate(EvaluateArgs),
    /// Write a fine-tuning job file for the training split.
    FinetunePrep(FinetuneArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Curate(_) => "curate",
            Command::Filter(_) => "filter",
            Command::ScoreCuration(_) => "score-curation",
            Command::Ground(_) => "ground",
            Command::Generate(_) => "generate",
            Command::Evaluate(_) => "evaluate",
            Command::FinetunePrep(_) => "finetune-prep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Action,
    Final,
    Both,
}

impl TargetArg {
    pub fn targets(self) -> Vec<Target> {
        match self {
            TargetArg::Action => vec![Target::Action],
            TargetArg::Final => vec![Target::Final],
            TargetArg::Both => Target::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long)]
    pub dataset: DatasetTag,
    #[arg(long)]
    pub annotations: PathBuf,
    /// Directory of videos: `<video_id>/` frame folders or `<video_id>.synthetic.json`.
    #[arg(long)]
    pub videos: PathBuf,
    /// midpoint, lego or keyframes; the dataset's default when omitted.
    #[arg(long)]
    pub strategy: Option<SelectionStrategy>,
    #[arg(long)]
    pub out: PathBuf,
    /// Where frames are written; `<out dir>/frames` by default.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ScoreCurationArgs {
    #[arg(long)]
    pub auto: PathBuf,
    #[arg(long)]
    pub manual: PathBuf,
    /// JSON report path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Similarity cutoff on the ×100 scale.
    #[arg(long)]
    pub cutoff: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Prompt template directory; the built-in templates when omitted.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub target: TargetArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub generated: PathBuf,
    /// Filtered manifest holding the ground-truth frames.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub target: TargetArg,
    /// Dataset name for the report; taken from the manifest when omitted.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub masks: PathBuf,
    #[arg(long, default_value = "action")]
    pub target: Target,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<u32>,
}
