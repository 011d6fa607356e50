use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use diffcollage_cli::commands::{self, Ctx};
use diffcollage_cli::config::ExperimentConfig;
use diffcollage_cli::classify_error;

/// Factor-graph diffusion composition: generate large content by merging
/// score models defined on overlapping pieces.
#[derive(Parser)]
#[command(name = "diffcollage", version, about)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true, default_value = "experiment.json")]
    config: PathBuf,

    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker count; overrides the config's `workers` and DC_WORKERS.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the graph, run all structural checks, resolve model references.
    Validate,
    /// Train node score networks and write checkpoints plus loss curves.
    Train,
    /// Generate samples from the composed score; write CSV, renders, metrics.
    Sample,
    /// Compare the composed route against sequential outpainting baselines.
    Baseline,
    /// Measure composed-evaluation latency across worker counts.
    Bench,
    /// Recompute metrics from previously written sample CSVs.
    Eval,
}

fn resolve_workers(cli: &Cli, config: &ExperimentConfig) -> usize {
    cli.workers
        .or(config.workers)
        .or_else(|| {
            std::env::var("DC_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let config = ExperimentConfig::load(&cli.config)?;
    let config_dir = cli
        .config
        .parent()
        .map(PathBuf::from)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let workers = resolve_workers(&cli, &config);
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(config.seed),
        config,
        config_dir,
        out_dir,
        workers,
    };
    match cli.command {
        Command::Validate => commands::validate::run(&ctx),
        Command::Train => commands::train::run(&ctx),
        Command::Sample => commands::sample::run(&ctx),
        Command::Baseline => commands::baseline::run(&ctx),
        Command::Bench => commands::bench::run(&ctx),
        Command::Eval => commands::eval::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(classify_error(&err) as u8)
        }
    }
}
