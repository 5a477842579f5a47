mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "overtake", version, about = "Opponent prediction and overtaking races on 1/10-scale tracks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Global {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every random draw derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Track generation and inspection.
    #[command(subcommand)]
    Track(TrackCmd),
    /// Training data.
    #[command(subcommand)]
    Data(DataCmd),
    /// GP training and evaluation.
    #[command(subcommand)]
    Gp(GpCmd),
    /// Single races.
    #[command(subcommand)]
    Race(RaceCmd),
    /// Monte Carlo studies.
    #[command(subcommand)]
    Mc(McCmd),
    /// Report files from stored race logs.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Subcommand)]
pub enum TrackCmd {
    /// Writes a random closed track as `track.json`.
    Gen,
    /// Samples a track file every 0.05 m as CSV (stdout unless `--out`).
    Show {
        track: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        spacing: f64,
    },
}

#[derive(Subcommand)]
pub enum DataCmd {
    /// Runs GT-predictor rollouts and writes `dataset.csv`.
    Generate {
        /// Overrides the configured row count.
        #[arg(long)]
        rows: Option<usize>,
    },
}

#[derive(Subcommand)]
pub enum GpCmd {
    /// Fits a GP to a dataset and writes `gp_model.json`.
    Fit {
        data: PathBuf,
        /// Exact GP instead of the configured inducing-point mode.
        #[arg(long)]
        exact: bool,
    },
    /// Prediction error of a model on a dataset.
    Eval { model: PathBuf, data: PathBuf },
}

#[derive(Subcommand)]
pub enum RaceCmd {
    /// Runs one race and writes `race.ndjson`.
    Run {
        /// Track file; a random track from the seed otherwise.
        #[arg(long)]
        track: Option<PathBuf>,
        /// Predictor label (`GP_1`, `CV_0.025`, `NL_0`, `GT`).
        #[arg(long)]
        predictor: Option<String>,
        #[arg(long)]
        q_y: Option<f64>,
        /// GP model for GP predictors.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
pub enum McCmd {
    /// Runs the configured sweep, storing logs under `logs/` and reports under `report/`.
    Sweep {
        /// GP model; overrides the configured path.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides the configured races per cell.
        #[arg(long)]
        races: Option<usize>,
    },
}

#[derive(Subcommand)]
pub enum ReportCmd {
    /// Rebuilds CSVs, SVG and manifest from a sweep's log directory.
    Emit {
        logs: PathBuf,
        /// GP model whose hash goes into the manifest.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Track(c) => commands::track(&cli.global, c),
        Command::Data(c) => commands::data(&cli.global, c),
        Command::Gp(c) => commands::gp(&cli.global, c),
        Command::Race(c) => commands::race(&cli.global, c),
        Command::Mc(c) => commands::mc(&cli.global, c),
        Command::Report(c) => commands::report(&cli.global, c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<overtake_core::Error>().map_or(1, |c| c.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
