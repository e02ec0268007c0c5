use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{ArgAction, Parser};
use taskforge::gateway::BackendKind;
use taskforge::{Pipeline, PipelineConfig, PipelineError};
use tracing_subscriber::EnvFilter;

/// Build a curated plan + example pretraining dataset from a sentence corpus.
#[derive(Parser, Debug)]
#[command(name = "taskforge", version)]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory of line-oriented corpus files (read in file-name order).
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Individual corpus file; may be repeated.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    model: Option<String>,
    /// Minimum mean coherency score, inclusive.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    plans_per_group: Option<usize>,
    #[arg(long)]
    scores_per_plan: Option<usize>,
    #[arg(long)]
    max_groups: Option<usize>,
    /// Groups in flight at once; also caps concurrent LLM requests unless the config sets it.
    #[arg(long)]
    concurrency: Option<usize>,
    /// Directory with generation.txt and/or scoring.txt template overrides.
    #[arg(long)]
    template_dir: Option<PathBuf>,
    #[arg(long, overrides_with = "no_resume", action = ArgAction::SetTrue)]
    resume: bool,
    #[arg(long, overrides_with = "resume", action = ArgAction::SetTrue)]
    no_resume: bool,
    /// Disable the on-disk response cache.
    #[arg(long)]
    no_cache: bool,
}

fn build_config(cli: Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    let in_flight_from_file = cli.config.is_some() && cfg.gateway.max_in_flight != taskforge::gateway::GatewayConfig::default().max_in_flight;
    if cli.input_dir.is_some() {
        cfg.input_dir = cli.input_dir;
    }
    cfg.inputs.extend(cli.inputs);
    if let Some(v) = cli.out {
        cfg.out = v;
    }
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.backend {
        cfg.gateway.backend = v;
    }
    if let Some(v) = cli.model {
        cfg.gateway.model = v;
    }
    if let Some(v) = cli.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = cli.plans_per_group {
        cfg.plans_per_group = v;
    }
    if let Some(v) = cli.scores_per_plan {
        cfg.scores_per_plan = v;
    }
    if let Some(v) = cli.max_groups {
        cfg.max_groups = Some(v);
    }
    if let Some(v) = cli.concurrency {
        cfg.concurrency = v;
        if !in_flight_from_file {
            cfg.gateway.max_in_flight = v.max(1);
        }
    }
    if let Some(v) = cli.template_dir {
        cfg.template_dir = Some(v);
    }
    if cli.resume {
        cfg.resume = true;
    }
    if cli.no_resume {
        cfg.resume = false;
    }
    if cli.no_cache {
        cfg.cache = false;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let cfg = match build_config(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let runtime = tokio::runtime::Runtime::new().context("starting runtime");
    let runtime = match runtime {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(Pipeline::new(cfg).run()) {
        Ok(report) => {
            print!("{}", report.summary);
            println!("manifest    {}", report.paths.manifest.display());
            ExitCode::SUCCESS
        }
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
