//! Command-line frontend for gated-network sparsification experiments.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 verification failure,
//! 3 training divergence.

mod check_cmd;
mod config;
mod eval_cmd;
mod report_cmd;
mod train_cmd;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use l0arm::error::Error;

#[derive(Parser)]
#[command(
    name = "l0arm",
    version,
    about = "Train, evaluate, and report sparsified gated networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a run from a JSON config, filling a run directory.
    Train {
        /// Path to the run config.
        config: PathBuf,
    },
    /// Score a checkpoint under the thresholded deployment mask.
    Eval {
        /// Run directory with config.json and checkpoints/final.ckpt.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Explicit checkpoint path (overrides the run-dir default).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Explicit config path (overrides the run-dir default).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Threshold; defaults to the config's tau.
        #[arg(long)]
        tau: Option<f64>,
        /// Additional thresholds to report, comma separated.
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<f64>,
    },
    /// Verify the gradient estimators against the enumeration oracle.
    EstimatorCheck {
        /// Number of randomized cases.
        #[arg(long, default_value_t = 20)]
        cases: usize,
        /// Monte-Carlo samples per case.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        /// Largest gate count to draw (enumeration-guarded).
        #[arg(long, default_value_t = 4)]
        max_gates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: corrupt the antithetic estimator; the check
        /// must then FAIL.
        #[arg(long)]
        falsify: bool,
    },
    /// Summarize finished run directories as tables and plot CSV.
    Report {
        /// One or more run directories.
        run_dirs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is usage.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };

    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                Error::Diverged { .. } => 3,
                _ => 1,
            })
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train { config } => {
            train_cmd::cmd_train(&config)?;
            Ok(0)
        }
        Command::Eval {
            run_dir,
            checkpoint,
            config,
            tau,
            sweep,
        } => {
            eval_cmd::cmd_eval(&eval_cmd::EvalArgs {
                run_dir,
                checkpoint,
                config,
                tau,
                sweep,
            })?;
            Ok(0)
        }
        Command::EstimatorCheck {
            cases,
            samples,
            max_gates,
            seed,
            falsify,
        } => {
            let code = check_cmd::cmd_estimator_check(&check_cmd::CheckArgs {
                cases,
                samples,
                max_gates,
                seed,
                falsify,
            })?;
            Ok(code as u8)
        }
        Command::Report { run_dirs } => {
            report_cmd::cmd_report(&run_dirs)?;
            Ok(0)
        }
    }
}
