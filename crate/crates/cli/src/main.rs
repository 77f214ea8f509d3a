//! `synth`: generate initial corpora, train, evaluate and serve.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Debug, Parser)]
#[command(
    name = "synth",
    version,
    about = "Nucleus-segmentation training data synthesis"
)]
struct Cli {
    /// Only log warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write initial synthetic samples and their manifest.
    Generate(GenerateArgs),
    /// Run the staged refiner/discriminator/task training.
    Train(TrainArgs),
    /// Score a task network (or ground-truth replay) on a stored corpus.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write a procedural real-patch corpus laid out by style folder.
    Phantom(PhantomArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthesis parameters, TOML or JSON (by extension).
    #[arg(long)]
    pub params: PathBuf,
    /// Real patches: a store with a manifest, or folders named by style.
    #[arg(long)]
    pub real_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: usize,
    /// Sample i is seeded with seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub workers: u16,
    /// Restrict sources to one style group.
    #[arg(long)]
    pub style: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Versioned TOML run config.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run of the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `data.real_dir` in the config.
    #[arg(long)]
    pub real_dir: Option<PathBuf>,
    /// Overrides `checkpoint_every` in the config.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Training checkpoint whose task network is evaluated.
    #[arg(
        long,
        required_unless_present = "replay_ground_truth",
        conflicts_with = "replay_ground_truth"
    )]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth against itself (pipeline check).
    #[arg(long)]
    pub replay_ground_truth: bool,
    /// Sample store with masks.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Per-image CSV output.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value_t = histosynth::eval::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "SYNTH_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "SYNTH_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Corpus directory; a procedural demo corpus is used when absent.
    #[arg(long, env = "SYNTH_CORPUS")]
    pub corpus: Option<PathBuf>,
    #[arg(long, env = "SYNTH_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Concurrent synthesis jobs (default: CPU cores).
    #[arg(long, env = "SYNTH_WORKERS")]
    pub workers: Option<usize>,
    /// Requests allowed to wait for a worker before 429 (default: 4 per worker).
    #[arg(long, env = "SYNTH_QUEUE")]
    pub queue: Option<usize>,
    /// Where presets and visual-test sessions persist.
    #[arg(long, env = "SYNTH_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
}

impl ServeArgs {
    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.host, self.port)
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of palette styles (at most 4).
    #[arg(long, default_value_t = 2)]
    pub styles: usize,
    #[arg(long, default_value_t = 8)]
    pub per_style: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<histosynth::Error> for Failure {
    fn from(e: histosynth::Error) -> Self {
        use histosynth::Error;
        match e {
            Error::Config(_) | Error::Params(_) => Self::usage(e.to_string()),
            other => Self::runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_max_level(if cli.quiet {
            tracing::Level::WARN
        } else {
            tracing::Level::INFO
        })
        .init();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Serve(a) => commands::serve(&a),
        Command::Phantom(a) => commands::phantom(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
