//! `credit-lens`: exact information-theoretic credit analysis of tabular MDPs.

mod commands;
mod input;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use credit_lens::Error;

#[derive(Debug, Parser)]
#[command(name = "credit-lens", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute credit measures and print a summary.
    Analyze(RunConfig),
    /// Evaluate both sides of each information identity.
    Check(RunConfig),
    /// Compare information sparsity across reward transforms.
    Sweep(RunConfig),
    /// Monte Carlo plug-in estimates against exact values.
    Sample(RunConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` must be a positive number")),
    }
}

fn non_negative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` must be a non-negative number")),
    }
}

#[derive(Debug, Clone, Args)]
#[group(skip)]
#[command(group(ArgGroup::new("source").required(true).args(["mdp", "generator"])))]
struct RunConfig {
    /// MDP file in JSON.
    #[arg(long, value_name = "PATH")]
    mdp: Option<PathBuf>,
    /// Generator spec such as `chain:4,h=3`, `grid:5x5,goal=4_4,slip=0.1`,
    /// `bandit:0/1` or `random:7`.
    #[arg(long = "gen", value_name = "SPEC")]
    generator: Option<String>,
    /// Policy file or `uniform`; repeat to form a policy set.
    #[arg(long, value_name = "PATH|uniform")]
    policy: Vec<String>,
    /// Comma-separated measures, or `all`.
    #[arg(long, value_name = "LIST")]
    measure: Option<String>,
    /// Classify the MDP as sparse when the largest information sparsity over
    /// the policy set is at most this value.
    #[arg(long, value_parser = non_negative)]
    epsilon: Option<f64>,
    /// Identity-check tolerance.
    #[arg(long, default_value_t = 1e-9, value_parser = positive)]
    tol: f64,
    /// Largest number of trajectories to enumerate.
    #[arg(long, env = "CREDIT_LENS_BUDGET", default_value_t = credit_lens::engine::DEFAULT_BUDGET,
          value_parser = clap::value_parser!(u64).range(1..))]
    budget: u64,
    /// Atoms in the categorical return grid.
    #[arg(long, default_value_t = credit_lens::engine::DEFAULT_ATOMS,
          value_parser = clap::builder::RangedU64ValueParser::<usize>::new().range(2..=1_000_000))]
    atoms: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of consecutive seeds, starting at `--seed`.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    seed_count: u64,
    /// Sample sizes for `sample`.
    #[arg(long, value_name = "LIST", default_value = "100,1000,10000,100000")]
    n_grid: String,
    /// Reward transforms for `sweep`.
    #[arg(long, value_name = "LIST", default_value = "none")]
    transforms: String,
    /// Output file; standard output when absent.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Print summaries in bits instead of nats.
    #[arg(long)]
    bits: bool,
    /// Pool per-pair quantities over timesteps.
    #[arg(long)]
    marginalize_time: bool,
    /// Apply the Miller-Madow correction to plug-in entropies.
    #[arg(long)]
    miller_madow: bool,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::BudgetExceeded { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(cfg) => commands::analyze(cfg),
        Command::Check(cfg) => commands::check(cfg),
        Command::Sweep(cfg) => commands::sweep(cfg),
        Command::Sample(cfg) => commands::sample(cfg),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
