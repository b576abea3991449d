//! `musurf run <config.json> [--out DIR] [--stages s1,s2,...] [--no-create]`
//!
//! Exit codes: 0 success, 1 I/O or configuration error, 2 density rejected,
//! 3 solver did not converge. `MUSURF_THREADS` caps the worker pool.

mod config;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::config::{RunConfig, Stage};
use crate::pipeline::{run_pipeline, EXIT_IO_OR_CONFIG};

#[derive(Parser)]
#[command(name = "musurf", version, about = "Nonparametric mu-surface pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the stages of a JSON configuration and write report.json plus CSVs.
    Run {
        config: PathBuf,
        /// Output directory; overrides `outputs` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated stage list; overrides `stages` in the config.
        #[arg(long, value_delimiter = ',')]
        stages: Option<Vec<Stage>>,
        /// Fail instead of creating a missing output directory.
        #[arg(long)]
        no_create: bool,
    },
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("MUSURF_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("MUSURF_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn run(
    config: PathBuf,
    out: Option<PathBuf>,
    stages: Option<Vec<Stage>>,
    no_create: bool,
) -> anyhow::Result<i32> {
    init_threads()?;
    let text = std::fs::read_to_string(&config)
        .with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(s) = stages {
        cfg.stages = s;
    }
    if let Some(o) = out {
        cfg.outputs = o;
    }
    if !cfg.outputs.is_dir() {
        if no_create {
            bail!("output directory {} does not exist", cfg.outputs.display());
        }
        std::fs::create_dir_all(&cfg.outputs)
            .with_context(|| format!("creating {}", cfg.outputs.display()))?;
    }
    let report = run_pipeline(&cfg, &cfg.outputs)?;
    for s in &report.stages {
        match &s.message {
            Some(m) => eprintln!("{}: {:?}: {m}", s.stage, s.status),
            None => eprintln!("{}: {:?}", s.stage, s.status),
        }
    }
    if let Some(m) = &report.density.message {
        eprintln!("density: {m}");
    }
    if let Some(e) = report.refinement.as_ref().and_then(|r| r.error.as_ref()) {
        eprintln!("refinement: {e}");
    }
    Ok(report.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            stages,
            no_create,
        } => run(config, out, stages, no_create),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_IO_OR_CONFIG as u8)
        }
    }
}
