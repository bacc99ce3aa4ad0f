//! `nestkit`: batch nested-sampling runs.
//!
//! Exit codes: 0 when a run passes (or only warns), 2 when its diagnostics
//! fail, 1 on any error including bad usage.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod deadpoints;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand, ValueEnum};
use nestkit::diagnostics::Verdict;

use crate::commands::PlotKind;
use crate::config::Overrides;

#[derive(Parser)]
#[command(
    name = "nestkit",
    version,
    about = "Nested sampling runs, summaries and plot data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run from a config file (or a manifest) and write the run directory.
    Run(RunArgs),
    /// Recompute log Z, its uncertainty, H, ESS and the insertion p-value.
    Summary(SummaryArgs),
    /// Write tabular plot data for a finished run.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
    /// Overrides `output_dir` in the config.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SummaryArgs {
    run_dir: PathBuf,
    /// Simulated volume draws behind sigma_log_z.
    #[arg(long, default_value_t = commands::DEFAULT_SIMULATIONS)]
    simulate: usize,
    #[arg(long, default_value_t = commands::DEFAULT_SIM_SEED)]
    sim_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    #[value(name = "posterior_1d")]
    Posterior1d,
    #[value(name = "logL_vs_logX", alias = "logl_vs_logx")]
    LogLVsLogX,
    Thermo,
}

#[derive(Args)]
struct PlotArgs {
    run_dir: PathBuf,
    #[arg(long, value_enum)]
    kind: Kind,
    /// Histogram bins per parameter (posterior_1d).
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value_t = 0.1)]
    beta_min: f64,
    #[arg(long, default_value_t = 10.0)]
    beta_max: f64,
    /// Number of β grid points (thermo).
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Directory for the output file; defaults to the run directory.
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Run(a) => {
            let overrides = Overrides {
                seed: a.seed,
                workers: a.workers,
                output: a.output,
            };
            commands::run(&a.config, &overrides)
        }
        Command::Summary(a) => commands::summary(&a.run_dir, a.simulate, a.sim_seed).map(|()| Verdict::Pass),
        Command::Plotdata(a) => {
            let kind = match a.kind {
                Kind::Posterior1d => PlotKind::Posterior1d { bins: a.bins },
                Kind::LogLVsLogX => PlotKind::LogLVsLogX,
                Kind::Thermo => PlotKind::Thermo {
                    beta_min: a.beta_min,
                    beta_max: a.beta_max,
                    n: a.n,
                },
            };
            commands::plotdata(&a.run_dir, kind, a.output).map(|path| {
                println!("{}", path.display());
                Verdict::Pass
            })
        }
    };
    match result {
        Ok(Verdict::Fail) => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
