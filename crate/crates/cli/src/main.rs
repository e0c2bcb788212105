use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;
mod error;
mod record;

use commands::dataset::{ExtractArgs, SynthArgs};
use commands::ingest::{CatalogArgs, CompositeArgs};
use commands::model::{EvalArgs, PredictArgs, TrainArgs};
use commands::plot::PlotArgs;
use commands::transfer::{CompareArgs, InferArgs, SeriesArgs};
use commands::Context;
use config::RunConfig;
use error::{CliError, CliResult};

/// Burned-area mapping from Sentinel-2 composites: data preparation, model
/// training and evaluation, regional inference and district time series.
#[derive(Debug, Parser)]
#[command(name = "burnscan", version)]
struct Cli {
    /// Run configuration (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel steps (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed for model initialisation, shuffling and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Index granule directories holding B8A, B03 and B12.
    Catalog(CatalogArgs),
    /// Build 20 m three-band composites for every catalogued scene.
    Composite(CompositeArgs),
    /// Tile composites into labeled 128x128 patches and split them.
    Extract(ExtractArgs),
    /// Train the segmentation model on a patch store.
    Train(TrainArgs),
    /// Score a model on a patch store (IoU and Dice per patch).
    Eval(EvalArgs),
    /// Predict the burned mask of one composite.
    Predict(PredictArgs),
    /// Predict regional mosaics per period.
    Infer(InferArgs),
    /// Burned fraction and area per district and period.
    Series(SeriesArgs),
    /// Compare a mosaic with a reference burned-area product.
    Compare(CompareArgs),
    /// Write a synthetic granule set with labels, districts and a reference mask.
    Synth(SynthArgs),
    /// Draw a false-colour / truth / prediction triptych PNG.
    Plot(PlotArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let ctx = Context { config, seed: cli.seed };
    match cli.command {
        Command::Catalog(a) => commands::ingest::catalog(a, &ctx),
        Command::Composite(a) => commands::ingest::composite_cmd(a, &ctx),
        Command::Extract(a) => commands::dataset::extract(a, &ctx),
        Command::Train(a) => commands::model::train_cmd(a, &ctx),
        Command::Eval(a) => commands::model::eval(a, &ctx),
        Command::Predict(a) => commands::model::predict(a, &ctx),
        Command::Infer(a) => commands::transfer::infer(a, &ctx),
        Command::Series(a) => commands::transfer::series(a, &ctx),
        Command::Compare(a) => commands::transfer::compare(a, &ctx),
        Command::Synth(a) => commands::dataset::synth(a, &ctx),
        Command::Plot(a) => commands::plot::plot(a, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn };
    env_logger::Builder::new().filter_level(level).parse_default_env().format_timestamp(None).init();

    panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let result = panic::catch_unwind(AssertUnwindSafe(|| run(cli))).unwrap_or_else(|_| Err(CliError::Internal("unexpected panic".into())));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("burnscan: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
