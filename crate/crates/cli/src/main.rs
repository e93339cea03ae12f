mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use elsim_core::Method;

/// Empirical-likelihood confidence intervals for simulation input uncertainty.
#[derive(Parser, Debug)]
#[command(name = "elsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Confidence interval for a model on observed input data.
    Ci(CiArgs),
    /// Solve the weight optimization for given coefficients.
    Solve(SolveArgs),
    /// Run a coverage experiment described by a config file.
    Experiment(ExperimentArgs),
    /// Estimate the true performance measure by direct simulation.
    Truth(TruthArgs),
    /// Draw a synthetic dataset from a preset's true input laws.
    DrawData(DrawDataArgs),
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Preset name (mm1, san5, san14, san14_tail) or path to a network file.
    #[arg(long)]
    model: String,
    /// For network files: report P(completion time > THRESHOLD) instead of
    /// the completion time.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args, Debug)]
struct CiArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory with input_1.csv, input_2.csv, ...
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    r1: Option<usize>,
    #[arg(long)]
    r2: Option<usize>,
    #[arg(long)]
    b: Option<usize>,
    #[arg(long)]
    rb: Option<usize>,
    #[arg(long)]
    rd: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Result document (JSON).
    #[arg(long, default_value = "ci_result.json")]
    out: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// One line of comma-separated coefficients per input model.
    #[arg(long)]
    coeffs: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Directory for weights_min.csv and weights_max.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the number of synthetic datasets.
    #[arg(long)]
    replications: Option<usize>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct TruthArgs {
    /// Experiment config supplying model and true laws.
    #[arg(long, conflicts_with = "model", required_unless_present = "model")]
    config: Option<PathBuf>,
    /// Preset name, as an alternative to --config.
    #[arg(long)]
    model: Option<String>,
    /// Number of simulation runs (default: the config's oracle_n, else 10^6).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write value, standard error, N and seed into the config's [truth] table.
    #[arg(long, requires = "config")]
    pin: bool,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args, Debug)]
struct DrawDataArgs {
    /// Preset name.
    #[arg(long)]
    model: String,
    /// Comma-separated data sizes, one per input model.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
struct RunArgs {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Omit timings and other run-dependent content from outputs.
    #[arg(long)]
    stable_output: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum MethodArg {
    Bel,
    Eel,
    Fel,
    Lel,
    Boot,
    Delta,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bel => Method::Bel,
            MethodArg::Eel => Method::Eel,
            MethodArg::Fel => Method::Fel,
            MethodArg::Lel => Method::Lel,
            MethodArg::Boot => Method::Boot,
            MethodArg::Delta => Method::Delta,
        }
    }
}

const EXIT_INVALID: u8 = 2;
const EXIT_SOLVER: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ci(args) => commands::ci(args),
        Command::Solve(args) => commands::solve(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::Truth(args) => commands::truth(args),
        Command::DrawData(args) => commands::draw_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let solver = err.chain().any(|e| {
                e.downcast_ref::<elsim_core::Error>()
                    .is_some_and(|e| e.is_solver_failure())
            });
            ExitCode::from(if solver { EXIT_SOLVER } else { EXIT_INVALID })
        }
    }
}
