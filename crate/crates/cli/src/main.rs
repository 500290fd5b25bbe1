//! `cadence`: analyze a track, compile a frame plan, draw it, and run the
//! stub optimizer over it.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use cadence::optim::L1Update;
use cadence::schedule::{BlendScope, GuidanceMode, DEFAULT_FPS_MAX, DEFAULT_FPS_MIN};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cadence", version, about = "Beat-synchronous frame planning for guided image generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tempo, beats, segments and the onset envelope of a WAV file, as JSON.
    Analyze {
        #[arg(long)]
        audio: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Compile a frame plan; writes the plan and a copy of the embedding store
    /// (`<out stem>.embeddings.json`) with any stub embeddings it needed.
    Plan(PlanArgs),
    /// Draw a plan as an SVG timeline.
    Viz {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a plan through the stub backend and write per-frame metrics.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct AnalysisArgs {
    /// Beat tracker tightness.
    #[arg(long, default_value_t = 100.0)]
    pub tightness: f64,
    /// Segments shorter than this merge into a neighbour.
    #[arg(long, default_value_t = 0.1)]
    pub min_segment: f64,
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    #[arg(long)]
    pub audio: PathBuf,
    /// LRC file.
    #[arg(long)]
    pub lyrics: Option<PathBuf>,
    /// Embedding manifest; missing `audio:K` / `text:K` ids are filled with stubs.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Embedding dimension when no manifest is given.
    #[arg(long, default_value_t = cadence::embed::DEFAULT_DIM)]
    pub dim: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FPS_MIN)]
    pub fps_min: f64,
    #[arg(long, default_value_t = DEFAULT_FPS_MAX)]
    pub fps_max: f64,
    #[arg(long, default_value = "segment-locked")]
    pub mode: GuidanceMode,
    /// none, full, or first:K
    #[arg(long, default_value = "full")]
    pub blend_scope: BlendScope,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub analysis: AnalysisArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Output directory for metrics.jsonl and summary.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lambda_l1: f64,
    /// proximal or subgradient
    #[arg(long, default_value = "proximal")]
    pub l1_update: L1Update,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub iters_per_frame: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stub generator latent size; defaults to twice the embedding dimension.
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Stub image size; defaults to twice the embedding dimension.
    #[arg(long)]
    pub image_dim: Option<usize>,
    /// Compare the backend gradient with finite differences before running.
    #[arg(long)]
    pub check_grad: bool,
}

/// An error paired with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub const EXIT_IO: u8 = 2;
pub const EXIT_INSUFFICIENT: u8 = 3;
pub const EXIT_INVALID: u8 = 4;

impl Failure {
    pub fn io(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_IO, error: error.into() }
    }

    pub fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INVALID, error: error.into() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CADENCE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze { audio, out, analysis } => commands::analyze(&audio, &out, &analysis),
        Command::Plan(args) => commands::plan(&args),
        Command::Viz { plan, out } => commands::viz(&plan, &out),
        Command::Simulate(args) => commands::simulate(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
