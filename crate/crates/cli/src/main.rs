//! `hjbc` binary: solve / simulate / ztest / verify / viability / sandwich /
//! all, driven by a TOML config with per-key overrides.
//!
//! Exit codes: 0 success, 1 check failure or runtime error, 2 usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hjbc_cli::load_config;
use hjbc_cli::pipeline::{Command, Context};

#[derive(Parser)]
#[command(
    name = "hjbc",
    version,
    about = "Solver and verifier suite for discounted stochastic optimal control under state constraints"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the simulation seed (same as --set sim.seed=...).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: $HJBC_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override a config key, e.g. --set solver.tol=1e-6 (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Discretize and solve the constrained Bellman equation.
    Solve,
    /// Simulate the dynamics under the extracted policy and estimate cost.
    Simulate,
    /// Statistical super/subsolution tests of the constant bounds.
    Ztest,
    /// Residual checks of the constrained viscosity inequalities.
    Verify,
    /// Boundary viability scan and feedback construction.
    Viability,
    /// Ordering check of the solved value against its constant bounds.
    Sandwich,
    /// Run every stage in order and aggregate the verdict.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("sim.seed={seed}"));
    }
    let (config, hash) = match load_config(cli.config.as_deref(), &overrides) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    let out = cli
        .out
        .or_else(|| config.output.dir.clone())
        .or_else(|| std::env::var_os("HJBC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let cmd = match cli.command {
        Sub::Solve => Command::Solve,
        Sub::Simulate => Command::Simulate,
        Sub::Ztest => Command::Ztest,
        Sub::Verify => Command::Verify,
        Sub::Viability => Command::Viability,
        Sub::Sandwich => Command::Sandwich,
        Sub::All => Command::All,
    };

    let mut ctx = match Context::new(config, hash, out) {
        Ok(c) => c,
        Err(e) => {
            // problem construction failures are configuration problems
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match ctx.run(cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed; see reports in {}", ctx.out.display());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("run error: {e:#}");
            ExitCode::from(1)
        }
    }
}
