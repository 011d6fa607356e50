//! Subcommand implementations. Every command returns its process exit code;
//! hard failures bubble up as errors and are classified by the binary.

pub mod baseline;
pub mod bench;
pub mod eval;
pub mod sample;
pub mod train;
pub mod validate;

use std::path::PathBuf;
use std::sync::Arc;

use diffcollage_core::graph::FactorGraph;
use diffcollage_core::sampler::SamplerConfig;
use diffcollage_core::schedule::{NoiseSchedule, TimeGrid};

use crate::config::ExperimentConfig;

/// Resolved invocation context shared by all commands.
pub struct Ctx {
    pub config: ExperimentConfig,
    /// Directory of the config file; relative paths resolve against it.
    pub config_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
}

impl Ctx {
    pub fn pool(&self) -> anyhow::Result<crate::exec::PoolExecutor> {
        crate::exec::PoolExecutor::new(self.workers)
    }

    pub fn ensure_out_dir(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        Ok(())
    }
}

/// Graph, schedule, and time grid, built and validated.
pub struct Prepared {
    pub graph: Arc<FactorGraph>,
    pub schedule: NoiseSchedule,
    pub grid: TimeGrid,
}

/// Builds the graph and schedule; on validation findings prints the report
/// and returns `None` (the caller exits with [`crate::exit::VALIDATION`]).
pub fn prepare(ctx: &Ctx) -> anyhow::Result<Option<Prepared>> {
    let graph = ctx.config.graph.build()?;
    let report = graph.validate();
    if !report.is_empty() {
        for v in &report {
            println!("{v}");
        }
        return Ok(None);
    }
    let schedule = ctx.config.schedule.build()?;
    let grid = schedule.karras_grid(ctx.config.schedule.steps, ctx.config.schedule.rho)?;
    Ok(Some(Prepared {
        graph: Arc::new(graph),
        schedule,
        grid,
    }))
}

impl Prepared {
    /// Sampler settings from the config section with the context seed.
    pub fn sampler_config(&self, ctx: &Ctx) -> anyhow::Result<SamplerConfig> {
        let section = &ctx.config.sampler;
        Ok(SamplerConfig::new(
            self.grid.clone(),
            section.method.to_core(),
            section.eta,
            ctx.seed,
        )?
        .with_final_denoise(section.final_denoise))
    }
}
