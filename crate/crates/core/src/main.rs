// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowbridge::scenario::{deltas_csv, diff_runs, run_scenario_files, RunOptions, ScenarioError};

/// Runs a scenario on a simulated edge/fog/cloud deployment and writes the
/// metrics export, event trace and summary tables.
#[derive(Debug, Parser)]
#[command(name = "flowbridge", version, args_conflicts_with_subcommands = true)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Topology file (TOML).
    #[arg(long)]
    topology: Option<PathBuf>,

    /// Scenario file (TOML).
    #[arg(long)]
    scenario: Option<PathBuf>,

    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, env = "FLOWBRIDGE_OUT", default_value = "flowbridge-out")]
    out: PathBuf,

    /// Run length in seconds, replacing the scenario's duration.
    #[arg(long)]
    duration_override: Option<f64>,

    /// Pace the simulation against the wall clock (demo mode).
    #[arg(long)]
    real_time: bool,

    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-topic rate and latency deltas between two run directories (B - A).
    Diff { a: PathBuf, b: PathBuf },
}

fn fail(err: &ScenarioError) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(err.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();

    if let Some(Command::Diff { a, b }) = &cli.command {
        return match diff_runs(a, b) {
            Ok(deltas) => {
                print!("{}", deltas_csv(&deltas));
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        };
    }

    let (Some(topology), Some(scenario)) = (&cli.topology, &cli.scenario) else {
        eprintln!("error: --topology and --scenario are required");
        return ExitCode::from(2);
    };
    let opts = RunOptions { seed: cli.seed, duration_override: cli.duration_override, real_time: cli.real_time };
    match run_scenario_files(topology, scenario, &cli.out, &opts) {
        Ok(runs) => {
            for run in &runs {
                if let Some(name) = &run.name {
                    println!("== {name}");
                }
                print!("{}", run.summary.topics_csv());
            }
            log::info!("results written to {}", cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
