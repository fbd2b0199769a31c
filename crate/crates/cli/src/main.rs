//! `tvws`: CSV tables for spectrum reservation experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::CliError;
use config::{ExperimentConfig, RawConfig, KEYS_HELP};

#[derive(Parser, Debug)]
#[command(name = "tvws", version, about = "Spectrum reservation experiments as CSV tables", after_long_help = KEYS_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (defaults to the built-in market when omitted).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Write the CSV here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,

    /// Simulation seed; overrides `[output] seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Which party's profit the profit tables report.
    #[arg(long, global = true, value_enum)]
    profit: Option<ProfitArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ProfitArg {
    Db,
    Wsd,
    Network,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Benchmark reservations over the xi grid.
    ReserveSweep,
    /// Expected profits of every solution over the wholesale price.
    ProfitSweep,
    /// Optimal menus of both risk schemes with marginal prices.
    ContractDump,
    /// Expected profits over the variance of xi.
    VarianceSweep,
    /// Database gain from pooling the reservations of N WSDs.
    Aggregate,
    /// Monte Carlo run of the two-timescale market.
    Simulate,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_raw(&RawConfig::from_file(path)?)?,
        None => ExperimentConfig::defaults(),
    };
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(p) = cli.profit {
        cfg.profit = Some(
            match p {
                ProfitArg::Db => "db",
                ProfitArg::Wsd => "wsd",
                ProfitArg::Network => "network",
            }
            .to_string(),
        );
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    match cli.command {
        Command::ReserveSweep => commands::reserve_sweep(&cfg),
        Command::ProfitSweep => commands::profit_sweep_cmd(&cfg),
        Command::ContractDump => commands::contract_dump(&cfg),
        Command::VarianceSweep => commands::variance_sweep_cmd(&cfg),
        Command::Aggregate => commands::aggregate(&cfg),
        Command::Simulate => commands::simulate(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tvws: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
