//! `surrogate-fem`: runs the Poisson and p-Laplacian experiments, the
//! eigenvalue-bound check and the operator-apply benchmark, writing
//! `results.csv`, `timing.csv`, `config.echo` and `run.log` to the output
//! directory.

mod commands;
mod config;
mod error;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, LevelFilter};

use config::{Overrides, RawConfig, RunConfig, Task};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "surrogate-fem", version, about = "Surrogate-matrix finite element experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a Poisson benchmark on each macro level.
    Solve(RunArgs),
    /// H-convergence study of surrogate and standard solves.
    Convergence(RunArgs),
    /// Convergence study repeated for several sampling levels.
    SamplingStudy(RunArgs),
    /// Time-dependent p-Laplacian on the unit disk.
    #[command(name = "plaplacian")]
    PLaplacian(RunArgs),
    /// Eigenvalue perturbation bounds on random and assembled matrix pairs.
    SpectrumCheck(RunArgs),
    /// Operator-apply throughput of quadrature and surrogate stencils.
    BenchMvp(RunArgs),
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::field("threads", e))?;
    }
    Ok(())
}

fn run(task: Task, args: &RunArgs) -> CliResult<()> {
    let mut raw = match &args.config {
        Some(path) => RawConfig::from_file(path)?,
        None => RawConfig::default(),
    };
    raw.apply(&args.overrides)?;
    let cfg = RunConfig::resolve(task, &raw)?;
    std::fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("{}: {e}", cfg.out.display())))?;
    logging::init(&cfg.out.join("run.log"))?;
    configure_threads(cfg.threads)?;
    std::fs::write(cfg.out.join("config.echo"), cfg.echo())?;
    info!(
        "surrogate-fem {} {task:?} with {} threads, output in {}",
        env!("CARGO_PKG_VERSION"),
        rayon::current_num_threads(),
        cfg.out.display()
    );
    commands::run(&cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (task, args) = match &cli.command {
        Command::Solve(a) => (Task::Solve, a),
        Command::Convergence(a) => (Task::Convergence, a),
        Command::SamplingStudy(a) => (Task::SamplingStudy, a),
        Command::PLaplacian(a) => (Task::PLaplacian, a),
        Command::SpectrumCheck(a) => (Task::SpectrumCheck, a),
        Command::BenchMvp(a) => (Task::BenchMvp, a),
    };
    match run(task, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if log::max_level() == LevelFilter::Off {
                eprintln!("error: {e}");
            } else {
                error!("{e}");
            }
            e.exit_code()
        }
    }
}
