use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dasksvd::pipeline::Method;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "dasksvd", version, about = "Discriminant structured dictionaries for oximetry-based apnea screening")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic cohort of annotated records
    Synth(SynthArgs),
    /// Repair, filter and segment a directory of records
    Prepare(PrepareArgs),
    /// Learn a dictionary from a prepared segment set
    Learn(LearnArgs),
    /// Train the classifier on sparse codes
    Train(TrainArgs),
    /// Classify a segment set and report the confusion matrix
    Classify(ClassifyArgs),
    /// Estimate AHI per record and run ROC analysis
    Screen(ScreenArgs),
    /// Re-run a command from its run.json
    Replay(ReplayArgs),
}

/// Config file plus overrides. Flags win over the file.
#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
pub struct ConfigArgs {
    /// TOML or JSON pipeline config
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override any config field, e.g. `--set ksvd.sparsity=5`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SynthArgs {
    /// TOML or JSON cohort spec
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_records: Option<usize>,
    #[arg(long)]
    pub duration_hours: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct PrepareArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct LearnArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub segments: PathBuf,
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ScreenArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub dictionary: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// AHI cutoff in events per hour
    #[arg(long)]
    pub threshold: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    /// run.json written by an earlier command
    pub run: PathBuf,
    /// Write outputs here instead of the recorded directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: dasksvd::Error| e.to_string())
}

/// Replayable part of an invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Synth(SynthArgs),
    Prepare(PrepareArgs),
    Learn(LearnArgs),
    Train(TrainArgs),
    Classify(ClassifyArgs),
    Screen(ScreenArgs),
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Synth(_) => "synth",
            Invocation::Prepare(_) => "prepare",
            Invocation::Learn(_) => "learn",
            Invocation::Train(_) => "train",
            Invocation::Classify(_) => "classify",
            Invocation::Screen(_) => "screen",
        }
    }

    pub fn out_mut(&mut self) -> &mut PathBuf {
        match self {
            Invocation::Synth(a) => &mut a.out,
            Invocation::Prepare(a) => &mut a.out,
            Invocation::Learn(a) => &mut a.out,
            Invocation::Train(a) => &mut a.out,
            Invocation::Classify(a) => &mut a.out,
            Invocation::Screen(a) => &mut a.out,
        }
    }
}
