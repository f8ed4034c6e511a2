use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use suda_core::experiment::{compare_file, execute_suite, load_suite, resolve_output_dir, ExecuteOptions, Status};
use suda_core::spectral::{spectral_report, Method};
use suda_core::topology::TopologySpec;
use suda_core::Error;

const EXIT_RUN_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "suda", version, about = "Decentralized stochastic optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a suite file, or a bundled suite by name (fig1, fig2, fig3, fig5).
    Run {
        suite: PathBuf,
        /// Output directory; defaults to the suite's `output`, then $SUDA_OUT_DIR/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of runs executed concurrently.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Print the spectral constants of a method on a topology as JSON.
    SpectralReport { topology: String, method: String },
    /// Evaluate an assertion spec against suite summaries.
    Compare { spec: PathBuf },
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_CONFIG)
}

fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) | Error::InvalidTopology(_) | Error::InvalidParameter(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::from(EXIT_RUN_FAILURE),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { suite, out, jobs } => {
            let suite = match load_suite(&suite) {
                Ok(s) => s,
                Err(e) => return exit_for(&e),
            };
            if jobs == Some(0) {
                return config_error("--jobs must be at least 1");
            }
            let dir = resolve_output_dir(&suite, out.as_deref());
            let opts = ExecuteOptions { jobs, ..ExecuteOptions::new(&dir) };
            eprintln!("suite {}: {} runs -> {}", suite.name, suite.run_count(), dir.display());
            let outcome = match execute_suite(&suite, &opts) {
                Ok(o) => o,
                Err(e) => return exit_for(&e),
            };
            for e in &outcome.summary.entries {
                let plateau = e.plateau.get("grad_norm_avg_sq").map_or("-".to_string(), |p| format!("{p:.4e}"));
                println!("{:<40} {:?}  plateau ‖∇f(x̄)‖² {plateau}", e.id, e.status);
                for f in &e.failures {
                    println!("    seed {}: {}", f.seed, f.message);
                }
            }
            if outcome.summary.status == Status::Ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} run(s) failed", outcome.failed_runs());
                ExitCode::from(EXIT_RUN_FAILURE)
            }
        }
        Command::SpectralReport { topology, method } => {
            let topology: TopologySpec = match topology.parse() {
                Ok(t) => t,
                Err(e) => return exit_for(&e),
            };
            let method: Method = match method.parse() {
                Ok(m) => m,
                Err(e) => return exit_for(&e),
            };
            match spectral_report(&topology, method) {
                Ok(r) => match serde_json::to_string_pretty(&r) {
                    Ok(s) => {
                        println!("{s}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => config_error(e),
                },
                Err(e) => exit_for(&e),
            }
        }
        Command::Compare { spec } => match compare_file(&spec) {
            Ok(report) => {
                for o in &report.outcomes {
                    println!("{o}");
                }
                if report.passed() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(EXIT_RUN_FAILURE)
                }
            }
            Err(e) => exit_for(&e),
        },
    }
}
