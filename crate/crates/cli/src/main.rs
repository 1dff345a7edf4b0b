//! `smelab`: config-driven experiments for stochastic modified equations.

mod commands;
mod config;
mod figures;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use manifest::{Artifacts, Status};

/// Exit status of a run that completed but diverged (clap reserves 2 for usage errors).
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "smelab", version, about = "SGD vs stochastic modified equation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<experiment>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the replica count.
    #[arg(long, global = true)]
    replicas: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Reproduce a pinned figure configuration.
    Figure {
        /// One of fig1, fig2, fig4, sm-fig7.
        name: String,
    },
    /// Simulate SGD/MSGD or integrate an SME.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train with a named optimizer.
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Train over a learning-rate grid and aggregate.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
    },
}

fn load(path: &Path, common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(r) = common.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| Path::new("runs").join(&cfg.experiment))
}

fn run(cli: Cli) -> Result<Status> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let (name, cfg_path) = match &cli.command {
        Command::Figure { name } => {
            let seed = cli.common.seed.unwrap_or(figures::DEFAULT_SEED);
            let dir = cli.common.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
            if !figures::FIGURES.contains(&name.as_str()) {
                anyhow::bail!("unknown figure `{name}`; available: {}", figures::FIGURES.join(", "));
            }
            let mut out = Artifacts::create(&dir)?;
            let run = figures::run(name, seed, cli.common.replicas, &mut out)?;
            out.finish("figure", &run, Status::Completed)?;
            return Ok(Status::Completed);
        }
        Command::Simulate { config } => ("simulate", config),
        Command::Train { config } => ("train", config),
        Command::Sweep { config } => ("sweep", config),
    };
    let cfg = load(cfg_path, &cli.common)?;
    let mut out = Artifacts::create(&out_dir(&cfg))?;
    let status = match name {
        "simulate" => commands::simulate(&cfg, &mut out)?,
        "train" => commands::train_cmd(&cfg, &mut out)?,
        _ => commands::sweep(&cfg, &mut out)?,
    };
    // resolved config alongside the manifest, reusable with `-c`
    out.write_json("config.json", &cfg)?;
    let dir = out.dir().to_path_buf();
    out.finish(name, &cfg, status)?;
    log::info!("{name} finished ({status:?}); artifacts in {}", dir.display());
    Ok(status)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(Status::Completed) => ExitCode::SUCCESS,
        Ok(Status::Diverged) => {
            eprintln!("run diverged; see manifest.json");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
