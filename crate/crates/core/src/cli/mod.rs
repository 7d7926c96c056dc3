//! Command-line front end.
//!
//! Configuration is layered: built-in defaults, then a figure preset
//! (for `reproduce`), then the `--config` file, then `--set key=value`
//! overrides and the dedicated flags.

pub mod config;
pub mod output;
pub mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{ConfigError, ExperimentConfig, Figure, GraphSource, Mode};
pub use run::{run_experiment, run_with_threads, CliError, RunSummary};

#[derive(Debug, Parser)]
#[command(name = "opindyn", version, about = "Opinion dynamics on sparse random graphs and their tree limits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Affects speed only.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    /// Stop once the contraction bound falls below this value.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Extra `key=value` overrides; dotted keys reach into sections.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Iterate the recursion on a random graph.
    Simulate,
    /// Draw root opinions from the series on random trees.
    TreeSample,
    /// Closed-form stationary moments on the tree.
    TreeAnalytic,
    /// Moments after finitely many steps from zero.
    FiniteHorizon,
    /// Variance with memory against the rescaled memoryless recursion.
    MemoryCompare,
    /// Re-create one of the figure experiments.
    Reproduce { figure: Figure },
    /// Check a configuration without running it.
    Validate { figure: Option<Figure> },
}

/// Resolves the layered configuration for a parsed command line.
pub fn resolve_config(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    let (mode, preset) = match &cli.command {
        Command::Simulate => (Mode::Simulate, None),
        Command::TreeSample => (Mode::TreeSample, None),
        Command::TreeAnalytic => (Mode::TreeAnalytic, None),
        Command::FiniteHorizon => (Mode::FiniteHorizon, None),
        Command::MemoryCompare => (Mode::MemoryCompare, None),
        Command::Reproduce { figure } => (Mode::Reproduce(*figure), Some(*figure)),
        Command::Validate { figure } => (figure.map_or(Mode::Simulate, Mode::Reproduce), *figure),
    };
    let mut cfg = preset.map(ExperimentConfig::preset).unwrap_or_default();
    if let Some(path) = &cli.common.config {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        cfg.apply_toml(&text)?;
    }
    for kv in &cli.common.set {
        cfg.apply_override(kv)?;
    }
    // the subcommand decides the mode
    cfg.mode = mode;
    let c = &cli.common;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(r) = c.replicas {
        cfg.replicas = r;
    }
    if let Some(e) = c.epsilon {
        cfg.epsilon = e;
    }
    Ok(cfg)
}

pub fn main_with(cli: Cli) -> ExitCode {
    let cfg = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Command::Validate { .. } = cli.command {
        let v = cfg.violations();
        if v.is_empty() {
            println!("ok");
            return ExitCode::SUCCESS;
        }
        for line in v {
            println!("{line}");
        }
        return ExitCode::from(1);
    }
    match run_with_threads(&cfg, cli.common.threads) {
        Ok(summary) => {
            for m in &summary.messages {
                println!("{m}");
            }
            println!("wrote {} files under {}", summary.files.len(), cfg.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
