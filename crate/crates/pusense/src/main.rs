use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pusense::config::FileConfig;
use pusense::experiment;

/// Closed-form and simulated energy-detection performance when the
/// primary user may arrive and depart several times per sensing window.
#[derive(Parser)]
#[command(name = "pusense", version, about)]
struct Cli {
    /// Experiment configuration file (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory where CSV outputs are written
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Simulation seed; overrides the seed in the configuration file
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Operating curves over a threshold grid, one CSV per change cap
    Roc,
    /// Thresholds holding detection probability at a target, swept over SNR
    Threshold,
    /// Operating curves for each holding-time model
    Models,
    /// Monte Carlo check of the closed-form averages
    Validate,
    /// Achievable throughput over a sensing-time grid
    Throughput,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("error: --config <PATH> is required");
        return ExitCode::from(2);
    };
    let file = match FileConfig::load(config_path) {
        Ok(file) => file,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Roc => experiment::run_roc(&file, &cli.out),
        Command::Threshold => experiment::run_threshold(&file, &cli.out),
        Command::Models => experiment::run_models(&file, &cli.out),
        Command::Validate => experiment::run_validate(&file, &cli.out, cli.seed),
        Command::Throughput => experiment::run_throughput(&file, &cli.out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
