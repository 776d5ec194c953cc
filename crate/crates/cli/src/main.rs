//! Spatiotemporal tensor-graph forecasting pipeline.
//!
//! Each subcommand runs one stage and communicates with the others only
//! through serialized artifacts in the output directory, so stages can be
//! rerun, inspected, and diffed independently. Exit codes: 0 success,
//! 2 configuration error, 3 data/artifact error, 4 numerical failure.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

mod config;
mod stages;

use config::load_config;
use stages::{CliError, Paths};

#[derive(Parser)]
#[command(name = "stgf", version, about = "Spatiotemporal tensor-graph forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration file; omitted sections use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured RNG seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory where artifacts are read and written.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Override one configuration key, e.g. --set graph.sigma2=0.2.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic diffusion series and write it as CSV.
    Synth,
    /// Load the series CSV, window it, and cache the normalized splits.
    Prepare,
    /// Construct the spatial and temporal graphs from training windows.
    BuildGraph,
    /// Lift both graphs to spectral filter stacks.
    Lift,
    /// Jointly compress the graph pair and lift the reconstructions.
    Peps,
    /// Fit the forecasting model and write a checkpoint.
    Train,
    /// Run the checkpoint over the test split.
    Predict,
    /// Score predictions and emit metrics plus plot data.
    Eval,
    /// Train and score the three filter-stack variants, then compare.
    Ablate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(cli.config.as_deref(), &cli.sets, cli.seed)?;
    let paths = Paths::new(cli.out);
    stages::prepare_run_dir(&cfg, &paths)?;
    match cli.command {
        Command::Synth => stages::cmd_synth(&cfg, &paths),
        Command::Prepare => stages::cmd_prepare(&cfg, &paths),
        Command::BuildGraph => stages::cmd_build_graph(&cfg, &paths),
        Command::Lift => stages::cmd_lift(&cfg, &paths),
        Command::Peps => stages::cmd_peps(&cfg, &paths),
        Command::Train => stages::cmd_train(&cfg, &paths),
        Command::Predict => stages::cmd_predict(&cfg, &paths),
        Command::Eval => stages::cmd_eval(&cfg, &paths),
        Command::Ablate => stages::cmd_ablate(&cfg, &paths),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("stgf: {e}");
        std::process::exit(e.exit_code());
    }
}
