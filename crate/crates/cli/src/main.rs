//! `edgesplit`: profile devices, train latency predictors, search for a
//! decomposition policy, simulate it against the baseline schedules,
//! calibrate toy sub-models, and summarize a run directory.

mod artifacts;
mod commands;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "edgesplit", version, about = "Decomposed transformer inference planning for edge fleets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Profile synthetic sub-models on every device and write latency datasets.
    Profile(commands::ProfileArgs),
    /// Fit one latency predictor per device from the profiled datasets.
    TrainPredictor(commands::TrainArgs),
    /// Search for a decomposition policy with Bayesian optimization.
    Optimize(commands::OptimizeArgs),
    /// Simulate the policy and the baseline schedules.
    Simulate(commands::SimulateArgs),
    /// Calibrate toy sub-models sized after the policy and train the aggregator.
    Boost(commands::BoostArgs),
    /// Consolidate the run directory into a summary.
    Report(commands::ReportArgs),
}

fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Profile(a) => commands::profile(a),
        Command::TrainPredictor(a) => commands::train(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Boost(a) => commands::boost(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let record = serde_json::json!({ "error": "UsageError", "message": e.to_string().trim() });
            eprintln!("{record}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::FAILURE
        }
    }
}
