mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::Failure;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (formats: TNSR1, TNSR1-PACK, MTSD1)");

#[derive(Parser)]
#[command(name = "mtp", version = VERSION, about = "Rotated window attention and multi-task pretraining toolkit")]
#[command(
    after_help = "Exit codes: 0 success, 1 validation failure, 2 usage error.\nMTP_SEED, when set, overrides --seed."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check analytic gradients of named ops against central differences.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic MTSD1 dataset.
    Synth(SynthArgs),
    /// Derive masks, horizontal boxes and a semantic map from rotated boxes.
    Labelgen(LabelgenArgs),
    /// Run multi-task pretraining from a JSON config.
    Pretrain(PretrainArgs),
    /// Recompute finetuning-schedule statistics and compare with a fixture.
    Analyze(AnalyzeArgs),
    /// Describe a TNSR1 tensor, TNSR1-PACK checkpoint or MTSD1 dataset.
    Inspect(InspectArgs),
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Comma-separated op names, or `all`.
    #[arg(long, value_delimiter = ',', default_value = "all")]
    pub ops: Vec<String>,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds per op.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = mtp_core::gradcheck::DEFAULT_STEP)]
    pub step: f64,
    /// List the available op names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Args)]
pub struct SynthArgs {
    /// Output MTSD1 path.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub samples: usize,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: u32,
    #[arg(long, default_value_t = 1)]
    pub min_boxes: usize,
    #[arg(long, default_value_t = 3)]
    pub max_boxes: usize,
    #[arg(long, default_value_t = 3.0)]
    pub min_side: f64,
    #[arg(long, default_value_t = 10.0)]
    pub max_side: f64,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub dataset_id: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct LabelgenArgs {
    /// JSON array of boxes: {"cx", "cy", "w", "h", "theta", "class_id"}.
    #[arg(long)]
    pub boxes: PathBuf,
    #[arg(long)]
    pub height: usize,
    #[arg(long)]
    pub width: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    /// Class count recorded in the dataset header; defaults to max class + 1.
    #[arg(long)]
    pub classes: Option<u32>,
    #[arg(long, default_value_t = 0)]
    pub dataset_id: u32,
    /// Write the result as a one-sample MTSD1 file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum LoadArg {
    /// Restore the backbone, keep fresh heads.
    Backbone,
    /// Restore backbone and every matching head.
    Decoders,
}

#[derive(Args)]
pub struct PretrainArgs {
    /// JSON training config; relative stream paths resolve against its directory.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for trace.csv and model.ckpt.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the config iteration count.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "backbone")]
    pub load: LoadArg,
    /// Progress line every N iterations on stderr; 0 disables.
    #[arg(long, default_value_t = 25)]
    pub log_every: usize,
}

#[derive(Args)]
pub struct AnalyzeArgs {
    /// JSON fixture: array of schedule configs with expected values.
    #[arg(long)]
    pub fixture: PathBuf,
    /// Write the CSV report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// List every entry (checkpoint keys or samples).
    #[arg(long)]
    pub all: bool,
}

/// `MTP_SEED` wins over the flag when set.
fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var("MTP_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Usage(format!("MTP_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let env_seed = seed_override()?;
    match cli.command {
        Command::Gradcheck(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::gradcheck(&a)
        }
        Command::Synth(mut a) => {
            a.seed = env_seed.unwrap_or(a.seed);
            commands::synth(&a)
        }
        Command::Labelgen(a) => commands::labelgen(&a),
        Command::Pretrain(mut a) => {
            a.seed = env_seed.or(a.seed);
            commands::pretrain(&a)
        }
        Command::Analyze(a) => commands::analyze(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
