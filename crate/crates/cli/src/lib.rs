//! The `voxsg` command-line tool.
//!
//! Exit codes: 0 on success, 1 for usage errors (flags, config keys), 2 for
//! data errors. Data errors name the case they occurred in.

pub mod commands;
pub mod config;
pub mod error;
pub mod server;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "voxsg", version, about = "Scene graphs over 3D voxel label maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded phantom dataset
    Synth(SynthArgs),
    /// Instance objects from a label map into a scene graph without relations
    Extract(ExtractArgs),
    /// Train one relation model per seed
    Train(TrainArgs),
    /// Write predicted scene graphs for a dataset split
    Predict(PredictArgs),
    /// Detection AR/AP of instanced objects against ground truth
    EvalDet(EvalDetArgs),
    /// Relation recall, mean recall and mAP with detection upper bound
    EvalSgg(EvalSggArgs),
    /// Dataset statistics
    Stats(StatsArgs),
    /// Serve the annotation API
    Serve(ServeArgs),
    /// Print every configuration key with its default
    Config,
}

#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Run configuration file of `key = value` lines
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Phantom generator settings as JSON; defaults when omitted
    #[arg(long, value_name = "FILE")]
    pub phantom: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// NIfTI label map
    #[arg(long)]
    pub labels: PathBuf,
    /// Scene graph JSON to write
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the label file name without extension
    #[arg(long)]
    pub case_id: Option<String>,
    #[arg(long)]
    pub connectivity: Option<String>,
    #[arg(long)]
    pub min_bleeding_volume: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory for checkpoints and the training report
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub arch: Option<String>,
    /// Train seeds 0..N
    #[arg(long, value_name = "N")]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub grounding: bool,
    #[arg(long)]
    pub epochs: Option<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// predcls or sggen
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Directory receiving one `<case>.json` per case
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalDetArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Detections as scene graphs; instanced from the degraded label maps
    /// when omitted
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub iou: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalSggArgs {
    /// Ground truth from a dataset split
    #[arg(long, conflicts_with = "gt")]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Ground truth from a directory of scene graph files
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Directory of predicted graphs, one run per flag
    #[arg(long)]
    pub predictions: Vec<PathBuf>,
    /// Checkpoint to predict with, one run per flag (needs --dataset)
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    #[arg(long)]
    pub iou: Option<String>,
    /// Row label in the table
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, conflicts_with = "gt")]
    pub dataset: Option<PathBuf>,
    /// Directory of scene graph files
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
}

/// Parse `args` (program name first) and run the command. Returns the exit
/// code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
