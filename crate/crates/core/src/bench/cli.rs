//! Command-line entry point.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::config::RunConfig;
use crate::bench::experiment::{self, STRESS_SIZES};
use crate::bench::report::{canonical_json, emit_report};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "etcl", version, about = "Continual learning with mask-isolated sub-networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a full task sequence and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the CSV tables.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Skip the independent per-task baselines (FWT is then null).
        #[arg(long)]
        no_baselines: bool,
    },
    /// Train only the independent per-task baselines.
    One {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the transfer bound on random discrete task pairs.
    VerifyBounds {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Task-count scaling on a permuted sequence.
    Stress {
        #[arg(long, default_value_t = 100)]
        tasks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            csv,
            no_baselines,
        } => {
            let cfg = RunConfig::load(&config)?;
            let report = experiment::run_experiment(&cfg, !no_baselines)?;
            emit_report(&report, &out, csv.as_deref())?;
            let show = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.4}"));
            eprintln!(
                "{} tasks  ACC {:.4}  BWT {}  FWT {}",
                report.accuracy.len(),
                report.acc,
                show(report.bwt),
                show(report.fwt)
            );
            Ok(())
        }
        Command::One { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let report = experiment::run_baselines(&cfg)?;
            write_or_print(out.as_deref(), &canonical_json(&report)?)
        }
        Command::VerifyBounds { trials, seed, out } => {
            let report = crate::theory::verify_bound(trials, seed)?;
            eprintln!(
                "{} trials  forward violations {}  backward violations {}  min slack {:.3e}  max slack {:.3e}  equality cases {}",
                report.trials,
                report.forward_violations,
                report.backward_violations,
                report.min_slack,
                report.max_slack,
                report.equality_cases
            );
            write_or_print(out.as_deref(), &canonical_json(&report)?)?;
            if report.passed() {
                Ok(())
            } else {
                Err(Error::Degenerate(format!(
                    "bound violated {} times",
                    report.forward_violations + report.backward_violations
                )))
            }
        }
        Command::Stress { tasks, seed, out } => {
            let cfg = experiment::stress_config(tasks, seed);
            let report = experiment::run_stress(&cfg, tasks, STRESS_SIZES)?;
            eprintln!(
                "{} tasks  ACC {:.4}  BWT {:.4}  mask bytes {} (bound {})",
                report.tasks, report.acc, report.bwt, report.mask_storage_bytes, report.mask_bound_bytes
            );
            write_or_print(out.as_deref(), &serde_json::to_string_pretty(&report)?)
        }
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit status:
/// 0 on success, 2 for usage or configuration errors, 1 for anything else.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
