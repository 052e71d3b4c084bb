mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;
use run::RunDir;

/// Few-shot intent classification: pre-train, evaluate and analyse encoders.
#[derive(Debug, Parser)]
#[command(name = "intentkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Root for run directories (overrides `out_dir`, default `runs`).
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,

    /// Global seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override a config key, e.g. `--set joint.train.lambda=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Compute device. Only `cpu` is available.
    #[arg(long, global = true, env = "INTENTKIT_DEVICE", default_value = "cpu")]
    device: String,

    /// -v info, -vv debug, -vvv trace.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Load, filter and re-emit datasets with per-dataset statistics.
    Ingest,
    /// Supervised pre-training on a labeled source corpus.
    Pretrain,
    /// Joint supervised + masked-LM pre-training.
    Joint,
    /// Episodic few-shot evaluation of a frozen encoder.
    Eval,
    /// Labeled or unlabeled data-amount sweep.
    Sweep,
    /// Joint versus two-stage pre-training grid.
    Ablate,
    /// Vocabulary overlap matrix.
    Overlap,
    /// Export pooled embeddings for projection.
    Embed,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Pretrain => "pretrain",
            Command::Joint => "joint",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Ablate => "ablate",
            Command::Overlap => "overlap",
            Command::Embed => "embed",
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if !cli.device.eq_ignore_ascii_case("cpu") {
        bail!(
            "device {:?} is not available; only cpu is supported",
            cli.device
        );
    }
    let Some(path) = &cli.config else {
        bail!("--config is required");
    };
    let command = cli.command.name();
    let mut cfg = RunConfig::load(path, &cli.overrides)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.propagate_seed();
    cfg.validate(command)?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));

    if matches!(cli.command, Command::Ingest) && cfg.datasets.is_empty() {
        log::warn!("manifest declares no datasets; nothing to ingest");
        return Ok(());
    }
    let mut dir = RunDir::create(&out, command, &cfg)?;
    let results = match cli.command {
        Command::Ingest => commands::ingest(&cfg, &mut dir),
        Command::Pretrain => commands::pretrain(&cfg, &mut dir),
        Command::Joint => commands::joint(&cfg, &mut dir),
        Command::Eval => commands::eval(&cfg, &mut dir),
        Command::Sweep => commands::sweep(&cfg, &mut dir),
        Command::Ablate => commands::ablate(&cfg, &mut dir),
        Command::Overlap => commands::overlap(&cfg, &mut dir),
        Command::Embed => commands::embed(&cfg, &mut dir),
    }?;
    let run_dir = dir.dir.clone();
    dir.finish(&cfg, results)?;
    println!("{}", run_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
