//! `bench`: wall-clock latency of one composed evaluation round at several
//! worker counts and chain lengths, on a model with configurable per-call
//! cost.

use std::sync::Arc;

use diffcollage_core::collage::ComposedScore;
use diffcollage_core::graph::build_chain;
use diffcollage_core::sampler::sample_prior;

use crate::commands::Ctx;
use crate::config::{BenchConfig, ModelConfig, ModelsConfig};
use crate::exec::PoolExecutor;
use crate::{exit, io, models};

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let bench: BenchConfig = ctx.config.bench.clone().unwrap_or(BenchConfig {
        lengths: vec![2, 4, 8, 16],
        workers: vec![1, 2, 4, 8],
        busy_ms: 5.0,
        rounds: 3,
        mode: Default::default(),
    });
    let schedule = ctx.config.schedule.build()?;
    let heavy = ModelsConfig {
        default: ModelConfig::Heavy {
            phi: 0.8,
            sigma: 1.0,
            busy_ms: bench.busy_ms,
            mode: bench.mode,
        },
        factors: Default::default(),
        variables: Default::default(),
        conditions: None,
    };

    ctx.ensure_out_dir()?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for &length in &bench.lengths {
        let graph = Arc::new(build_chain(length, 4, 2)?);
        let resolved = models::resolve(&graph, schedule, &heavy, &ctx.config_dir)?;
        let composed = ComposedScore::new(graph.clone(), resolved.bindings)?;
        let u = sample_prior(graph.total_dim(), &schedule, schedule.sigma_max(), ctx.seed)?;
        let t_mid = 0.5 * (schedule.domain().0 + schedule.domain().1);

        let mut serial_ms = None;
        for &workers in &bench.workers {
            let pool = PoolExecutor::new(workers)?;
            // Warm-up round, then timed rounds.
            let reference = composed.score_with(&pool, &u, t_mid)?;
            let started = std::time::Instant::now();
            for _ in 0..bench.rounds.max(1) {
                let out = composed.score_with(&pool, &u, t_mid)?;
                // Outputs are part of the determinism contract: identical
                // values at every worker count.
                anyhow::ensure!(out == reference, "non-deterministic round output");
            }
            let mean_ms =
                started.elapsed().as_secs_f64() * 1000.0 / bench.rounds.max(1) as f64;
            if workers == 1 || serial_ms.is_none() {
                serial_ms = Some(mean_ms);
            }
            let speedup = serial_ms.expect("set above") / mean_ms;
            println!(
                "length {length:3} workers {workers}: {mean_ms:8.2} ms/round, speedup {speedup:.2}"
            );
            rows.push(vec![length as f64, workers as f64, mean_ms, speedup]);
        }
    }
    io::write_csv(
        &ctx.out_dir.join("bench.csv"),
        Some("length,workers,mean_ms,speedup"),
        &rows,
    )?;
    println!("latency table written to {}", ctx.out_dir.join("bench.csv").display());
    Ok(exit::OK)
}
