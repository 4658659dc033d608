use std::path::PathBuf;
use std::process::ExitCode;

use chainsde_cli::run::EXIT_ERROR;
use chainsde_cli::{exit_code, run, Command, ConfigError, ExperimentConfig, RunOptions, WORKERS_ENV};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chainsde", version, about = "Experiments for dX = Y dt, dY = Z dt, dZ = |X|^alpha dB")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate an ensemble and write the sampled states
    Simulate(RunArgs),
    /// Run coupled pairs on shared noise and estimate their divergence
    Couple(RunArgs),
    /// Check the a-priori and case bounds path by path
    Bounds(RunArgs),
    /// Scan for zero hits of X before the band stop
    Excursions(RunArgs),
    /// Estimate the strong self-convergence order
    Converge(RunArgs),
    /// Run the command named in the config file
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Flat key = value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (overrides the environment variable)
    #[arg(long)]
    workers: Option<usize>,
    /// KEY=VALUE overrides applied after the config file
    overrides: Vec<String>,
}

fn build(command: Option<Command>, args: &RunArgs) -> Result<(ExperimentConfig, RunOptions), ConfigError> {
    let mut cfg = ExperimentConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    if let Some(c) = command {
        cfg.command = c;
    }
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::new(o, "override must be KEY=VALUE"))?;
        cfg.set(k.trim(), v)?;
    }
    let workers = match args.workers {
        Some(w) => Some(w),
        None => match std::env::var(WORKERS_ENV) {
            Ok(v) => Some(v.trim().parse().map_err(|_| ConfigError::new("workers", format!("{WORKERS_ENV}={v:?}")))?),
            Err(_) => None,
        },
    };
    Ok((cfg, RunOptions { out: args.out.clone(), workers }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Sub::Simulate(a) => (Some(Command::Simulate), a),
        Sub::Couple(a) => (Some(Command::Couple), a),
        Sub::Bounds(a) => (Some(Command::Bounds), a),
        Sub::Excursions(a) => (Some(Command::Excursions), a),
        Sub::Converge(a) => (Some(Command::Converge), a),
        Sub::Run(a) => (None, a),
    };
    let (cfg, opts) = match build(command, args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    };
    let result = run(&cfg, &opts);
    match &result {
        Ok(outcome) => {
            for c in &outcome.checks {
                let mark = if c.passed { "ok" } else { "FAILED" };
                if c.detail.is_empty() {
                    println!("{mark:>6}  {}", c.name);
                } else {
                    println!("{mark:>6}  {}  ({})", c.name, c.detail);
                }
            }
            println!("summary: {}", outcome.summary.display());
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
