//! `melodysim` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a workflow fails, 2 for invalid input
//! or configuration (including usage errors reported by clap).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use melodysim::embedder::EmbedError;
use melodysim::features::FeatureKind;
use melodysim::melody::MelodyError;
use melodysim::midi::MidiError;
use melodysim::pipeline::PipelineError;

#[derive(Debug, Parser)]
#[command(name = "melodysim", version, about = "Melody-aware music similarity")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic multi-track MIDI pieces with labeled melody tracks.
    Synth(SynthArgs),
    /// Generate melody-preserving versions of every MIDI file in a directory.
    Augment(AugmentArgs),
    /// Render a corpus to audio segments and cache their features.
    Render(RenderArgs),
    /// Train the similarity model on a corpus.
    Train(TrainArgs),
    /// Compare two pieces (.wav or .mid).
    Compare(CompareArgs),
    /// Evaluate a checkpoint on a test corpus.
    Evaluate(EvaluateArgs),
    /// Train the melody-track classifier.
    TrainMelody(TrainMelodyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Chroma,
    Pitch,
    Cqt,
}

impl From<Baseline> for FeatureKind {
    fn from(b: Baseline) -> Self {
        match b {
            Baseline::Chroma => FeatureKind::Chroma,
            Baseline::Pitch => FeatureKind::Pitch,
            Baseline::Cqt => FeatureKind::Cqt,
        }
    }
}

#[derive(Debug, Args)]
struct CacheArgs {
    /// Feature cache directory (default: `<corpus>/cache`).
    #[arg(long, env = "MELODYSIM_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    count: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    bars: u32,
}

#[derive(Debug, Args)]
struct AugmentArgs {
    /// Directory of .mid files.
    input: PathBuf,
    /// Corpus directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    versions: usize,
    /// Melody classifier from `train-melody`, used for files without
    /// labeled melody tracks.
    #[arg(long)]
    melody_model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Corpus directory or manifest file.
    corpus: PathBuf,
    #[command(flatten)]
    cache: CacheArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory or manifest file.
    corpus: PathBuf,
    /// Checkpoint to write; the loss curve goes next to it.
    #[arg(long)]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Total number of epochs, counting those of a resumed checkpoint.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Loss curve CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    loss_csv: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
}

#[derive(Debug, Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
    /// Trained checkpoint; required unless `--baseline` is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    prop_threshold: Option<f64>,
    /// Report the DTW cost over this feature instead of using the model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Directory for the matrix and verdict files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Test corpus directory or manifest file.
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    kfold: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// DTW baseline to report alongside the model.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Directory for `report.json` and `report.txt`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cache: CacheArgs,
}

#[derive(Debug, Args)]
struct TrainMelodyArgs {
    /// Label CSV with columns file, track_index, is_melody (paths relative
    /// to the CSV). Without it the classifier is trained on synthetic pieces.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Number of synthetic pieces when no labels are given.
    #[arg(long, default_value_t = 80)]
    synthetic: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to write the classifier JSON.
    #[arg(long)]
    out: PathBuf,
}

fn is_invalid_input(cause: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(e) = cause.downcast_ref::<PipelineError>() {
        return e.is_invalid_input();
    }
    if let Some(e) = cause.downcast_ref::<EmbedError>() {
        return matches!(
            e,
            EmbedError::Config(_) | EmbedError::Checkpoint(_) | EmbedError::Json(_)
        );
    }
    if let Some(e) = cause.downcast_ref::<MelodyError>() {
        return matches!(
            e,
            MelodyError::Format(_) | MelodyError::Manifest(_) | MelodyError::NoSuchTrack(_)
        );
    }
    cause.is::<MidiError>()
}

/// Output cut short by a closed reader such as `head`.
fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(is_invalid_input);
    if invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Synth(args) => commands::synth(args),
        Command::Augment(args) => commands::augment(args),
        Command::Render(args) => commands::render(args),
        Command::Train(args) => commands::train(args),
        Command::Compare(args) => commands::compare(args),
        Command::Evaluate(args) => commands::evaluate(args),
        Command::TrainMelody(args) => commands::train_melody(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) if broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
