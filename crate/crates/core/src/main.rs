use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nfmig::policy::{policy_table, Objective};
use nfmig::scenario::{
    export_metrics, load_scenario, run_scenario, summary_text, sweep, ScenarioError,
};

#[derive(Parser)]
#[command(
    name = "nfmig",
    version,
    about = "Live migration simulator for 5G core network functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and export its metrics.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// downtime, migration-time or bytes
        #[arg(long)]
        objective: Option<Objective>,
    },
    /// Run a scenario once per value of a parameter.
    Sweep {
        scenario: PathBuf,
        /// Dotted path and values, e.g. migration_params.ppm_sync_interval_us=50000,100000
        #[arg(long)]
        param: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "sweep-out")]
        out: PathBuf,
    },
    /// Print the strategy decision grid.
    PolicyTable,
}

fn run(cli: Cli) -> Result<(), ScenarioError> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            out,
            objective,
        } => {
            let mut sc = load_scenario(&scenario)?;
            if let Some(o) = objective {
                sc.objective = o;
            }
            let bundle = run_scenario(&sc, seed);
            export_metrics(&bundle, &out)?;
            print!("{}", summary_text(&bundle));
        }
        Command::Sweep {
            scenario,
            param,
            seed,
            out,
        } => {
            let (key, values) = param
                .split_once('=')
                .ok_or_else(|| ScenarioError::Validation {
                    key: "--param".into(),
                    detail: "expected KEY=V1,V2,...".into(),
                })?;
            let values: Vec<String> = values.split(',').map(str::to_owned).collect();
            let text = std::fs::read_to_string(&scenario).map_err(|e| ScenarioError::Io {
                path: scenario.clone(),
                source: e,
            })?;
            let rows = sweep(&text, key, &values, seed, Some(&out))?;
            println!(
                "{key:<24} {:>10} {:>14} {:>14}",
                "migrations", "downtime_us", "bytes"
            );
            for r in rows {
                println!(
                    "{:<24} {:>10} {:>14} {:>14}",
                    r.value, r.migrations, r.downtime_us, r.bytes
                );
            }
        }
        Command::PolicyTable => print!("{}", policy_table()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
