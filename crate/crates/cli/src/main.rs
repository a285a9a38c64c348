//! `qshws`: staged simulation and reconstruction over a run directory.

mod config;
mod error;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use error::{CliError, CliResult};
use manifest::RunLock;
use stages::{stage_range, Context, Stage};

#[derive(Parser, Debug)]
#[command(name = "qshws", version, about = "Quantum Shack-Hartmann biphoton reconstruction pipeline")]
struct Cli {
    /// Configuration file (flat `section.key = value` lines); defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory; overrides `run.output_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a frame stack and truth tensors.
    Simulate,
    /// Estimate the JPD from the frame stack.
    EstimateJpd,
    /// Aperture conditional probability distributions.
    Cpd,
    /// Phase gradients from stored CPDs.
    Gradients,
    /// Integrate gradients into phase and wave function.
    Reconstruct,
    /// Fits, correlations and exported matrices.
    Analyze,
    /// Run a contiguous range of stages.
    Pipeline {
        #[arg(long, value_enum, default_value = "estimate-jpd")]
        stage_from: Stage,
        #[arg(long, value_enum, default_value = "analyze")]
        stage_to: Stage,
    },
    /// Print the effective configuration.
    ShowConfig,
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var("QSHWS_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(format!("QSHWS_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = &cli.run_dir {
        cfg.run.output_dir = d.display().to_string();
    }
    cfg.validate()?;
    if let Command::ShowConfig = cli.command {
        print!("{}", cfg.render());
        return Ok(());
    }
    let threads = thread_cap()?;
    if let Some(n) = threads {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let stages = match cli.command {
        Command::Simulate => vec![Stage::Simulate],
        Command::EstimateJpd => vec![Stage::EstimateJpd],
        Command::Cpd => vec![Stage::Cpd],
        Command::Gradients => vec![Stage::Gradients],
        Command::Reconstruct => vec![Stage::Reconstruct],
        Command::Analyze => vec![Stage::Analyze],
        Command::Pipeline { stage_from, stage_to } => stage_range(stage_from, stage_to)?,
        Command::ShowConfig => unreachable!(),
    };
    let dir = cfg.output_dir();
    let _lock = RunLock::acquire(&dir)?;
    let ctx = Context::new(cfg, dir, threads);
    for s in stages {
        ctx.run(s)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("qshws: error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qshws: error: {e}");
            ExitCode::FAILURE
        }
    }
}
