//! Command-line front end: one subcommand per experiment driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence,
//! 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use abram::experiments::{Command, ExperimentConfig};
use abram::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "abram", version, about = "Bayesian adversarial robustness experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Oracle density profiles on a (gamma, eps) grid.
    Density(Common),
    /// Parameter and particle paths of one run.
    Paths(Common),
    /// Propagation-of-chaos rate experiment.
    Chaos(Common),
    /// Long-time decay experiment.
    Longtime(Common),
    /// Train a classifier and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// abram, minibatch, fgsm-baseline or sgd (key `algorithm`).
        #[arg(long)]
        algorithm: Option<String>,
        /// `blobs`, `idx:<images>,<labels>` or a CSV path (key `data`).
        #[arg(long)]
        data: Option<String>,
    },
    /// Accuracy of a checkpoint under one attack.
    Attack {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to attack (key `checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Data to attack (key `data`).
        #[arg(long)]
        data: Option<String>,
        /// none, fgsm, pgd, bayes-sample or bayes-mean (key `attack`).
        #[arg(long)]
        attack: Option<String>,
    },
    /// Accuracy table of a checkpoint under several attacks.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate (key `checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Data to evaluate on (key `data`).
        #[arg(long)]
        data: Option<String>,
        /// Comma-separated attack list (key `attacks`).
        #[arg(long)]
        attacks: Option<String>,
    },
}

/// Flags shared by every subcommand. Flags override the config file, which
/// overrides the built-in defaults.
#[derive(Args)]
struct Common {
    /// Config file: `key = value` lines or a flat JSON object.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (key `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Main output path (key `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to ABRAM_THREADS, then all cores. Outputs
    /// do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn configure(common: &Common, extra: &[(&str, Option<String>)]) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(),
    };
    for s in &common.set {
        cfg.set_assignment(s)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", seed.to_string());
    }
    if let Some(out) = &common.out {
        cfg.set("out", out.to_string_lossy());
    }
    for (key, value) in extra {
        if let Some(v) = value {
            cfg.set(key, v.clone());
        }
    }
    Ok(cfg)
}

fn init_threads(flag: Option<usize>) -> Result<(), Error> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("ABRAM_THREADS") {
            Ok(v) => Some(
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("ABRAM_THREADS must be a positive integer, got '{v}'")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} worker threads: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<String, Error> {
    let path_str = |p: Option<PathBuf>| p.map(|p| p.to_string_lossy().into_owned());
    let (command, common, extra) = match cli.command {
        Sub::Density(c) => (Command::Density, c, vec![]),
        Sub::Paths(c) => (Command::Paths, c, vec![]),
        Sub::Chaos(c) => (Command::Chaos, c, vec![]),
        Sub::Longtime(c) => (Command::Longtime, c, vec![]),
        Sub::Train { common, algorithm, data } => (Command::Train, common, vec![("algorithm", algorithm), ("data", data)]),
        Sub::Attack {
            common,
            checkpoint,
            data,
            attack,
        } => (
            Command::Attack,
            common,
            vec![("checkpoint", path_str(checkpoint)), ("data", data), ("attack", attack)],
        ),
        Sub::Eval {
            common,
            checkpoint,
            data,
            attacks,
        } => (
            Command::Eval,
            common,
            vec![("checkpoint", path_str(checkpoint)), ("data", data), ("attacks", attacks)],
        ),
    };
    init_threads(common.threads)?;
    let cfg = configure(&common, &extra)?;
    command.run(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
