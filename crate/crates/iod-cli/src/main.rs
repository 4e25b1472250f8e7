//! `iod`: command line front end for the incremental detection toolkit.
//!
//! Exit codes follow the usual batch convention: 0 on success, 1 when the
//! work itself fails (bad input data, out-of-range stages, failed gradient
//! checks), 2 when the invocation is malformed. Diagnostics go to stderr;
//! results go to files or stdout.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use iod_core::config::{RunConfig, CONFIG_PATH_ENV};

mod commands;

use commands::{eval, gradcheck, pseudo, simulate, split, stats};

#[derive(Debug, Parser)]
#[command(
    name = "iod",
    version,
    about = "Incremental object detection: splits, pseudo-labels, evaluation, simulation",
    after_help = "The run configuration is read from --config, then from the \
                  IOD_CONFIG environment variable, then from built-in defaults."
)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(short, long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for parallel sections. Defaults to all available
    /// units; results never depend on the value.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write per-stage incremental training splits of a COCO file.
    Split(split::SplitArgs),
    /// Report only-old / only-new / co-occurrence image counts per stage.
    Stats(stats::StatsArgs),
    /// Turn a teacher detection stream into pseudo-labels.
    Pseudo(pseudo::PseudoArgs),
    /// Score a detection stream against COCO ground truth.
    Eval(eval::EvalArgs),
    /// Train the synthetic incremental scenario end to end.
    Simulate(simulate::SimulateArgs),
    /// Check every analytic gradient against finite differences.
    Gradcheck(gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(cli.config)?;
    init_workers(cli.workers, &cfg)?;
    match cli.command {
        Command::Split(args) => split::run(&args, &cfg),
        Command::Stats(args) => stats::run(&args),
        Command::Pseudo(args) => pseudo::run(&args, &cfg),
        Command::Eval(args) => eval::run(&args, &cfg),
        Command::Simulate(args) => simulate::run(&args, &cfg),
        Command::Gradcheck(args) => gradcheck::run(&args),
    }
}

/// `--config` beats `$IOD_CONFIG` beats built-in defaults. Schema warnings
/// (non-fatal) are forwarded to stderr.
fn load_config(flag: Option<PathBuf>) -> anyhow::Result<RunConfig> {
    let path = flag.or_else(|| std::env::var_os(CONFIG_PATH_ENV).map(PathBuf::from));
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let cfg = RunConfig::from_path(&path)
        .with_context(|| format!("loading config {}", path.display()))?;
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }
    Ok(cfg)
}

/// Sizes the global thread pool once, before any parallel section runs.
/// The flag wins over `io.workers`; 0 keeps rayon's default (all units).
fn init_workers(flag: Option<usize>, cfg: &RunConfig) -> anyhow::Result<()> {
    let n = flag.unwrap_or(cfg.io.workers);
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("initializing worker pool")?;
    }
    Ok(())
}
