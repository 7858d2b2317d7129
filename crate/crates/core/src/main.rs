use std::path::PathBuf;
use std::process::ExitCode;

use adjoint_seminorm::harness::config::ExperimentConfig;
use adjoint_seminorm::harness::{bench, gradcheck, solve, train, HarnessError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    version,
    about = "Adaptive ODE solves and adjoint gradients under default and seminorm error control"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Replace the config's seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Forward solve; writes solution.json and attempts_solve.csv.
    Solve(Common),
    /// Adjoint gradients against finite differences.
    Gradcheck(Common),
    /// Backward NFE and rejections per (tolerance, norm mode, seed).
    Bench {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent cells.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Fit a field to synthetic trajectories under each norm mode.
    Train(Common),
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    cfg.apply_seed_override(common.seed_override);
    std::fs::create_dir_all(&common.out)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", common.out.display())))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Solve(c) => solve::cmd_solve(&load(&c)?, &c.out),
        Command::Gradcheck(c) => gradcheck::cmd_gradcheck(&load(&c)?, &c.out),
        Command::Bench { common, parallel } => {
            bench::cmd_bench(&load(&common)?, &common.out, parallel)
        }
        Command::Train(c) => train::cmd_train(&load(&c)?, &c.out),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors on its own.
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
