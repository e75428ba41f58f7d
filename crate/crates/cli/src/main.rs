use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod io;
mod viz;

use commands::CliError;

/// Fog-aware self-training for semantic segmentation on synthetic road scenes.
#[derive(Debug, Parser)]
#[command(name = "fogadapt", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Pipeline configuration (JSON); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset (images, depth, labels, manifest).
    Generate(GenerateArgs),
    /// Render fog onto an image given its depth map.
    FogSim(FogSimArgs),
    /// Per-pixel self-entropy maps and histogram statistics.
    EntropyMap(EntropyMapArgs),
    /// Class-balanced pseudo-labels from multi-scale fused predictions.
    PseudoLabel(PseudoLabelArgs),
    /// Source-only training.
    Train(TrainArgs),
    /// Round-based self-training on the target domain.
    Adapt(AdaptArgs),
    /// mIoU of a checkpoint over a labeled dataset.
    Eval(EvalArgs),
    /// Side-by-side visual panels and CSV aggregation.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    domain: DomainArg,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Fog density interval for target scenes, e.g. "0.005,0.02".
    #[arg(long)]
    fog_beta_range: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FogSimArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    depth: PathBuf,
    #[arg(long, conflicts_with = "visibility", required_unless_present = "visibility")]
    beta: Option<f64>,
    /// Meteorological visibility in meters, converted to beta.
    #[arg(long)]
    visibility: Option<f64>,
    /// Atmospheric light "r,g,b" in [0,1].
    #[arg(long)]
    atmo: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EntropyMapArgs {
    #[arg(long, required_unless_present = "probs_dir", conflicts_with = "probs_dir", requires = "input")]
    model: Option<PathBuf>,
    /// Image file or directory of images.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Directory of FPRB probability volumes, used instead of a model.
    #[arg(long, conflicts_with = "input")]
    probs_dir: Option<PathBuf>,
    /// PNG file for a single input, directory otherwise.
    #[arg(long)]
    out_map: PathBuf,
    #[arg(long)]
    out_stats: PathBuf,
}

/// Inference scales: an explicit list, or `{1 + s_upper, 1, 1 - s_lower}`.
#[derive(Debug, Args)]
struct ScaleArgs {
    /// Comma-separated inference scales, e.g. "0.75,1,1.25".
    #[arg(long, conflicts_with_all = ["s_upper", "s_lower"])]
    scales: Option<String>,
    #[arg(long)]
    s_upper: Option<f64>,
    #[arg(long)]
    s_lower: Option<f64>,
}

#[derive(Debug, Args)]
struct PseudoLabelArgs {
    #[arg(long, required_unless_present = "probs_dir", conflicts_with = "probs_dir", requires = "target_dir")]
    model: Option<PathBuf>,
    #[arg(long)]
    target_dir: Option<PathBuf>,
    /// Directory of FPRB volumes used as the (already fused) predictions.
    #[arg(long, conflicts_with_all = ["target_dir", "scales", "s_upper", "s_lower"])]
    probs_dir: Option<PathBuf>,
    #[command(flatten)]
    scales: ScaleArgs,
    #[arg(long)]
    portion: Option<f64>,
    /// Rank by prediction times source spatial prior.
    #[arg(long)]
    spatial_priors: bool,
    /// Labeled source dataset used for spatial priors.
    #[arg(long)]
    source_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    source_dir: Option<PathBuf>,
    /// Pre-translated source images replacing the source `img/` files.
    #[arg(long)]
    translated_source_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Per-step loss CSV.
    #[arg(long)]
    losses: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AdaptArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    source_dir: Option<PathBuf>,
    #[arg(long)]
    translated_source_dir: Option<PathBuf>,
    #[arg(long)]
    target_dir: Option<PathBuf>,
    #[arg(long)]
    rounds: Option<usize>,
    #[command(flatten)]
    scales: ScaleArgs,
    #[arg(long)]
    lambda_se: Option<f64>,
    #[arg(long)]
    spatial_priors: bool,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data_dir: PathBuf,
    /// Class indices averaged into frequent_mIoU.
    #[arg(long, default_value = "0,1,2,4")]
    frequent: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long, requires = "data_dir")]
    model: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Number of panels to render.
    #[arg(long, default_value_t = 4)]
    count: usize,
    /// Two-column CSVs (key,value) merged column-wise into summary.csv.
    #[arg(long = "csv")]
    csvs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ERROR: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => e.exit_code() as u8,
        }
    }
}
