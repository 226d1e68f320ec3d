mod commands;
mod config;
mod error;
mod report;
mod table;

use clap::{Args, Parser, Subcommand};
use commands::{execute, Experiment};
use config::Overrides;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "kernel-mfg", version, about = "Kernel-penalized mean-field games with random-feature estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// JSON config; its `params` are merged over the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Training iterations.
    #[arg(long)]
    epochs: Option<usize>,
    /// Monte Carlo trials (timed repetitions for scaling-bench).
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory [default: $KMFG_OUT_ROOT/<experiment> or runs/<experiment>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// State dimension.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Bias of the kernel U-, random-feature V- and random-feature U-statistics.
    BiasTable(RunArgs),
    /// Variance of the random-feature U-statistic over an (M, N) grid with a two-term fit.
    VarianceGrid(RunArgs),
    /// Bias and variance of the interaction estimators.
    InteractionCheck(RunArgs),
    /// U- versus V-statistic terminal penalty across batch sizes and weights.
    PenaltyAblation(RunArgs),
    /// Bridge from a point mass to a two-component mixture.
    SbpBimodal(RunArgs),
    /// Bridge from the origin to a shifted Gaussian.
    SbpShift(RunArgs),
    /// Terminal penalty weight sweep.
    LambdaSweep(RunArgs),
    /// Exact kernel penalty versus random-feature penalties.
    KernelVsRf(RunArgs),
    /// Forward and backward cost of the kernel and random-feature penalties.
    ScalingBench(RunArgs),
    /// Electric-vehicle charging with and without congestion.
    EvCharging(RunArgs),
    /// Aggregate every run under a directory.
    Report { dir: PathBuf },
}

fn run<E: Experiment>(a: RunArgs) -> Result<(), CliError> {
    let o = Overrides { seeds: a.seeds, epochs: a.epochs, trials: a.trials, dim: a.dim };
    let dir = execute::<E>(a.config.as_deref(), a.out.as_deref(), &o)?;
    println!("{}", dir.display());
    Ok(())
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    use commands::*;
    match cmd {
        Command::BiasTable(a) => run::<BiasTable>(a),
        Command::VarianceGrid(a) => run::<VarianceGrid>(a),
        Command::InteractionCheck(a) => run::<InteractionCheck>(a),
        Command::PenaltyAblation(a) => run::<PenaltyAblation>(a),
        Command::SbpBimodal(a) => run::<SbpBimodal>(a),
        Command::SbpShift(a) => run::<SbpShift>(a),
        Command::LambdaSweep(a) => run::<LambdaSweep>(a),
        Command::KernelVsRf(a) => run::<KernelVsRf>(a),
        Command::ScalingBench(a) => run::<ScalingBench>(a),
        Command::EvCharging(a) => run::<EvCharging>(a),
        Command::Report { dir } => {
            let rows = report::report(&dir)?;
            println!("{} rows written to {}", rows.len(), dir.join("report.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
