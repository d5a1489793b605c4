//! Command-line surface. Every flag is optional at parse time so that it can
//! also come from a `--config` file; JSON keys are the long flag names.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::formats::Mode;

pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_ALPHA: f64 = 0.3;
pub const DEFAULT_BETA: f64 = -1.0 + 1e-9;
pub const DEFAULT_KAPPA: f64 = 20.0;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

#[derive(Debug, Parser)]
#[command(name = "geosteer", version, about = "Spherical activation steering on a toy byte-level transformer")]
pub struct Cli {
    /// JSON file whose keys mirror the long flags; flags given on the command line win.
    /// With no subcommand, the file's "command" key selects one.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Suppress the defaults banner and per-command reports
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a randomly initialised checkpoint to --out.
    InitModel(InitArgs),
    /// Write the bundled synthetic pairs, MC items and probe texts into --out.
    SynthData(SynthArgs),
    /// Dump last-token activations of contrastive pairs to --out.
    Extract(ExtractArgs),
    /// Build a prototype direction from an activation dump.
    Prototype(PrototypeArgs),
    /// Greedy decoding, optionally steered.
    Generate(GenerateArgs),
    /// Multiple-choice log-likelihood evaluation.
    EvalMc(EvalArgs),
    /// Norm profiles, rank collapse and the planted-direction check.
    #[command(subcommand)]
    Diagnose(Diagnose),
    /// Accuracy and rank drop over fixed rotation and addition strengths.
    Sweep(SweepArgs),
}

#[derive(Debug, Subcommand)]
pub enum Diagnose {
    Norms(NormsArgs),
    Rank(RankArgs),
    Planted(PlantedArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::InitModel(_) => "init-model",
            Command::SynthData(_) => "synth-data",
            Command::Extract(_) => "extract",
            Command::Prototype(_) => "prototype",
            Command::Generate(_) => "generate",
            Command::EvalMc(_) => "eval-mc",
            Command::Diagnose(Diagnose::Norms(_)) => "diagnose norms",
            Command::Diagnose(Diagnose::Rank(_)) => "diagnose rank",
            Command::Diagnose(Diagnose::Planted(_)) => "diagnose planted",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ScopeArg {
    All,
    AnswerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitArg {
    All,
    Train,
    Validation,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Common {
    /// Seed for initialisation, data generation and splits [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output path
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Arch {
    /// [default: 64]
    #[arg(long)]
    pub d_model: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub n_layers: Option<usize>,
    /// [default: 4]
    #[arg(long)]
    pub n_heads: Option<usize>,
    /// [default: 256]
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// [default: 256]
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

/// Where steering directions come from.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlanSource {
    /// Plan file; carries its own mode and parameters
    #[arg(long, conflicts_with = "prototypes")]
    pub plan: Option<PathBuf>,
    /// Comma-separated prototype files, one per steered layer
    #[arg(long, value_delimiter = ',')]
    pub prototypes: Option<Vec<PathBuf>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SteerParamArgs {
    /// [default: rotate]
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Maximum rotation strength [default: 0.3]
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    /// Gate threshold on δ [default: -0.999999999]
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Gate concentration [default: 20]
    #[arg(long, allow_negative_numbers = true)]
    pub kappa: Option<f64>,
    /// Addition strength, required with --mode add
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Rotate every token by this fixed t, bypassing the gate
    #[arg(long)]
    pub fixed_t: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct Steer {
    #[command(flatten)]
    #[serde(flatten)]
    pub source: PlanSource,
    #[command(flatten)]
    #[serde(flatten)]
    pub params: SteerParamArgs,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct InitArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: Arch,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExtractArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Checkpoint file
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Contrastive pairs (JSONL)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Comma-separated layers to capture, e.g. 1,2,3
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Which part of the seeded 4:1 split to use [default: all]
    #[arg(long)]
    pub split: Option<SplitArg>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PrototypeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Activation dump written by `extract`
    #[arg(long)]
    pub acts: Option<PathBuf>,
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// [default: 32]
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: Steer,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// MC items (JSONL)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Token positions the hooks act on [default: all]
    #[arg(long)]
    pub steer_scope: Option<ScopeArg>,
    /// [default: all]
    #[arg(long)]
    pub split: Option<SplitArg>,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: Steer,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct NormsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Contrastive pairs (JSONL)
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: Steer,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RankArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Probe texts, one per line
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Layer to analyse [default: first plan layer]
    #[arg(long)]
    pub layer: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    pub steer: Steer,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlantedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub arch: Arch,
    /// Ascending t grid in [0, 1] [default: 0,0.1,...,1]
    #[arg(long, value_delimiter = ',')]
    pub strengths: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// MC items (JSONL)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Probe texts for the rank analysis, one per line
    #[arg(long)]
    pub probes: Option<PathBuf>,
    /// Steered layers; a plan's own parameters are ignored
    #[command(flatten)]
    #[serde(flatten)]
    pub source: PlanSource,
    /// Ascending rotation strengths t [default: 0.1,0.2,...,1]
    #[arg(long, value_delimiter = ',')]
    pub strengths: Option<Vec<f64>>,
    /// Ascending addition strengths λ [default: 0.2,0.4,...,2 times the mean probe activation norm]
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
    /// [default: all]
    #[arg(long)]
    pub steer_scope: Option<ScopeArg>,
}
