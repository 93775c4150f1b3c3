//! `lakeice`: generate synthetic data, train the staged model, and produce
//! prediction, metric, phenology and plot artifacts.
//!
//! Every failure ends the process with one line `error[<class>]: <reason>`
//! on stderr and exit code 2 (config), 3 (data) or 4 (contract).

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Output root used when `--out` is omitted.
pub const OUTPUT_ROOT_ENV: &str = "LAKEICE_OUTPUT_ROOT";

#[derive(Parser, Debug)]
#[command(name = "lakeice", version = manifest::VERSION, about = "Multi-sensor lake ice monitoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic multi-lake dataset.
    Synth(SynthArgs),
    /// Train the staged pipeline on a split's training partition.
    Train(TrainArgs),
    /// Write daily water-fraction predictions per lake-winter.
    Predict(RunArgs),
    /// Segmentation and regression metrics.
    Eval(RunArgs),
    /// Ice-on / ice-off dates compared to a reference.
    Phenology(PhenologyArgs),
    /// Time-series or embedding figures with their data tables.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator seed (overrides the seed of `--config`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Generator settings as JSON; defaults to the four-lake desk preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `synth`.
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// `lowo:<winter>` or `lolo:<lake>`.
    #[arg(long, required_unless_present = "print_config")]
    pub split: Option<String>,
    /// Training configuration JSON; overrides `--preset`.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in schedule used when no `--config` is given.
    #[arg(long, value_enum, default_value_t = Preset::Published)]
    pub preset: Preset,
    /// `all`, `1` (segmentation stages) or `2` (regression on saved step-1 weights).
    #[arg(long, default_value = "all")]
    pub stages: String,
    /// Number of ensemble members; member `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 1)]
    pub ensemble: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Multiplies every stage's epoch count.
    #[arg(long)]
    pub epoch_scale: Option<f64>,
    /// Run directory; holds `member-<i>/<stage>.ckpt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// The published per-stage settings.
    Published,
    /// Tenth-scale schedule tuned for the synthetic desk dataset.
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Partition {
    Train,
    Test,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// Dataset directory the run was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Which side of the recorded split to process.
    #[arg(long, value_enum, default_value_t = Partition::Test)]
    pub partition: Partition,
    /// Report directory; defaults to the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PhenologyArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Water-fraction thresholds; repeat for several.
    #[arg(long, default_values_t = [lakeice::evaluation::DEFAULT_THRESHOLD])]
    pub threshold: Vec<f64>,
    /// JSON object keyed by `<lake>_<winter>` with `ice_on` / `ice_off`
    /// dates or `[start, end]` ranges. Defaults to generator truth, else labels.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Timeseries,
    Embedding,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(value_enum)]
    pub kind: PlotKind,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a, &args),
        Command::Train(a) => commands::train(a, &args),
        Command::Predict(a) => commands::predict(a, &args),
        Command::Eval(a) => commands::eval(a, &args),
        Command::Phenology(a) => commands::phenology(a, &args),
        Command::Plot(a) => commands::plot(a, &args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let reason = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {reason}", class.as_str());
            ExitCode::from(class.exit_code() as u8)
        }
    }
}
