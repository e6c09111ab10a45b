use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use cla_cli::{cmd_run, cmd_synth, cmd_trace, load_data, Config, Overrides};
use cla_core::recall::Balancing;

#[derive(Parser)]
#[command(name = "cla", version, about = "Continual learning augmentation: synthesize, simulate, explain")]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    mode: Option<Balancing>,
    /// Worker threads for parallel runs (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic regime-switching panel plus its ground-truth sidecar.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Run Monte Carlo simulations over a panel.
    Run {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export weight and strategy-value tables from a run trace.
    Trace {
        /// Trace file written by `run`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(&Overrides { runs: cli.runs, mode: cli.mode, jobs: cli.jobs, seed: cli.seed })?;
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    match cli.command.context("no command given (synth, run or trace)")? {
        Command::Synth { out } => {
            let side = cmd_synth(&cfg, &out)?;
            println!("wrote {} and {}", out.display(), side.display());
        }
        Command::Run { data, out } => {
            let panel = load_data(&cfg, &data)?;
            let summary = cmd_run(&cfg, &panel, &out)?;
            println!("{} runs written to {}", summary.runs.len(), out.display());
        }
        Command::Trace { data, out } => {
            let r = cmd_trace(&cfg, &data, &out)?;
            println!("{} periods reported to {}", r.steps.len(), out.display());
        }
    }
    Ok(())
}
