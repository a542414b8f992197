use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mhmp_cli::{
    cmd_compare, cmd_oracle_check, cmd_run, cmd_sweep, load_config, out_dir, parse_hops, CliError, OracleCheckOptions, EXIT_OK,
};
use mhmp_core::engine::SweepMetric;
use mhmp_core::schedulers::SchedulerKind;

/// Multi-hop multi-path relay network simulator.
#[derive(Debug, Parser)]
#[command(name = "mhmp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write summary.json plus CSV results.
    Run {
        scenario: PathBuf,
        /// Scheme to run; repeat for several. Defaults to the scenario's list.
        #[arg(long = "scheme")]
        schemes: Vec<SchedulerKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run several schemes on shared realizations and print a summary table.
    Compare {
        scenario: PathBuf,
        /// Comma-separated scheme names.
        #[arg(long, value_delimiter = ',', required = true)]
        schemes: Vec<SchedulerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Savings of full multi-path over the fixed single path per relay-layer count.
    Sweep {
        scenario: PathBuf,
        /// Relay layers, inclusive range such as 1..5.
        #[arg(long, value_parser = parse_hops)]
        hops: std::ops::RangeInclusive<usize>,
        /// latency or power.
        #[arg(long)]
        metric: SweepMetric,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the solver with the grid oracle and sample convexity.
    OracleCheck {
        scenario: PathBuf,
        /// Grid step on every ratio and power-split coordinate.
        #[arg(long, default_value_t = OracleCheckOptions::default().resolution)]
        resolution: f64,
        /// Blocks of the first replica to check.
        #[arg(long, default_value_t = OracleCheckOptions::default().instances)]
        instances: usize,
        /// Convexity samples per instance.
        #[arg(long, default_value_t = OracleCheckOptions::default().samples)]
        samples: usize,
        /// Largest accepted relative gap of the solver over the oracle.
        #[arg(long, default_value_t = OracleCheckOptions::default().max_gap)]
        max_gap: f64,
        /// Largest accepted relative convexity violation; reported only when unset.
        #[arg(long)]
        max_violation: Option<f64>,
    },
}

fn env_out_dir() -> Option<PathBuf> {
    std::env::var_os("MHMP_OUT_DIR").filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn print_outcome(outcome: &mhmp_cli::RunOutcome) {
    println!("{}", serde_json::to_string(outcome).expect("outcome serializes"));
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { scenario, schemes, seed, out } => {
            let config = load_config(&scenario)?;
            let (outcome, table) = cmd_run(&config, &schemes, seed, &out_dir(out, env_out_dir()))?;
            eprint!("{table}");
            print_outcome(&outcome);
        }
        Command::Compare { scenario, schemes, seed, out } => {
            let config = load_config(&scenario)?;
            let (outcome, table) = cmd_compare(&config, &schemes, seed, &out_dir(out, env_out_dir()))?;
            print!("{table}");
            eprintln!("{}", serde_json::to_string(&outcome).expect("outcome serializes"));
        }
        Command::Sweep { scenario, hops, metric, seed, out } => {
            let config = load_config(&scenario)?;
            let (_, csv) = cmd_sweep(&config, hops, metric, seed, &out_dir(out, env_out_dir()))?;
            print!("{csv}");
        }
        Command::OracleCheck { scenario, resolution, instances, samples, max_gap, max_violation } => {
            let config = load_config(&scenario)?;
            let opts = OracleCheckOptions { resolution, instances, samples, max_gap, max_violation, ..OracleCheckOptions::default() };
            let report = cmd_oracle_check(&config, &opts)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
            if !report.pass {
                let limit = max_violation.map_or("none".to_string(), |v| format!("{v:.1e}"));
                return Err(CliError::Check(format!(
                    "solver gap {:.3e} (limit {max_gap:.1e}), convexity violation {:.3e} (limit {limit})",
                    report.max_gap,
                    report.max_path_violation.max(report.max_objective_violation),
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            let _ = e.print();
            return ExitCode::from(EXIT_OK);
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
