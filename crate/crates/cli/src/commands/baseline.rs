//! `baseline`: the composed route against sequential outpainting and naive
//! concatenation on the stationary OU chain testbed, with crop-distance,
//! seam, and drift reports plus the call-count ledger.

use anyhow::{bail, Context};
use diffcollage_core::collage::{ComposedScore, NodeScore, ParallelScore};
use diffcollage_core::conditioning::{
    autoregressive_outpaint, GradientMode, GuidanceConfig, GuidanceMethod, LambdaSchedule,
};
use diffcollage_core::eval::{drift_profile, fd_plus, seam_statistic, MetricReport};
use diffcollage_core::exec::Executor;
use diffcollage_core::ou::OuProcess;
use diffcollage_core::rng;
use diffcollage_core::sampler::{sample, sample_batch, SamplerConfig};

use crate::commands::{prepare, Ctx};
use crate::config::{GraphConfig, GuidanceMethodConfig, ModelConfig};
use crate::{exit, io, models};

const SALT_CONCAT: u64 = 0xc0;
const SALT_AR: u64 = 0xa1;
const SALT_REFERENCE: u64 = 0x4e;

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let Some(prepared) = prepare(ctx)? else {
        return Ok(exit::VALIDATION);
    };
    let baseline = ctx
        .config
        .baseline
        .as_ref()
        .context("config has no baseline section")?;
    let eval = ctx
        .config
        .eval
        .as_ref()
        .context("baseline needs an eval section (crop_len, count)")?;
    let GraphConfig::Chain {
        factors: num_blocks,
        factor_len,
        overlap,
    } = ctx.config.graph
    else {
        bail!("the baseline comparison runs on chain graphs");
    };
    let ModelConfig::OuWindow { phi, sigma } = ctx.config.models.default else {
        bail!("the baseline comparison needs ou-window models (an exact reference distribution)");
    };
    let ou = OuProcess::new(phi, sigma)?;
    let count = baseline.count;
    let total_dim = prepared.graph.total_dim();
    let crop_len = eval.crop_len;

    let pool = ctx.pool()?;
    let sampler_config = prepared.sampler_config(ctx)?;
    let started = std::time::Instant::now();

    // Composed route: every node evaluated per round, K rounds.
    let resolved = models::resolve(
        &prepared.graph,
        prepared.schedule,
        &ctx.config.models,
        &ctx.config_dir,
    )?;
    let composed = ComposedScore::new(prepared.graph.clone(), resolved.bindings)?;
    let score = ParallelScore {
        composed: &composed,
        exec: &pool,
    };
    let dc = sample_batch(&pool, &score, &prepared.schedule, &sampler_config, count)?;

    // Naive concatenation: independent blocks, no overlap, truncated to the
    // joint length.
    let block_model = ou.window_model(factor_len, prepared.schedule)?;
    let blocks_needed = total_dim.div_ceil(factor_len);
    let concat: Vec<Vec<f64>> = collect(pool.map(count, &|i| {
        let mut long = Vec::with_capacity(blocks_needed * factor_len);
        for b in 0..blocks_needed {
            let joint = NodeScore {
                model: &block_model,
                dim: factor_len,
                condition: None,
            };
            let cfg = SamplerConfig {
                grid: sampler_config.grid.clone(),
                seed: rng::mix(&[ctx.seed, SALT_CONCAT, i as u64, b as u64]),
                ..sampler_config
            };
            let out = sample(&joint, &prepared.schedule, &cfg)?;
            long.extend(out.value);
        }
        long.truncate(total_dim);
        Ok(long)
    }))?;

    // Sequential outpainting, one run per configured guidance method.
    let mut ar_runs: Vec<(String, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>, usize)> = Vec::new();
    for method in &baseline.methods {
        let guidance = match method {
            GuidanceMethodConfig::Replacement => GuidanceConfig::replacement(),
            GuidanceMethodConfig::Reconstruction => GuidanceConfig::reconstruction(
                baseline.lambda,
                LambdaSchedule::SigmaScaled,
                GradientMode::ExactVjp,
            )?,
        };
        let method_tag = match guidance.method {
            GuidanceMethod::Replacement => 0u64,
            GuidanceMethod::Reconstruction => 1u64,
        };
        let results = collect(pool.map(count, &|i| {
            let cfg = SamplerConfig {
                grid: sampler_config.grid.clone(),
                seed: rng::mix(&[ctx.seed, SALT_AR, method_tag, i as u64]),
                ..sampler_config
            };
            autoregressive_outpaint(
                &block_model,
                None,
                factor_len,
                num_blocks,
                overlap,
                &guidance,
                &prepared.schedule,
                &cfg,
            )
        }))?;
        let calls = results.first().map(|r| r.score_calls).unwrap_or(0);
        // Per-block sample sets for the drift profile.
        let mut blocks: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(count); num_blocks];
        let mut longs = Vec::with_capacity(count);
        for r in results {
            for (b, block) in r.blocks.iter().enumerate() {
                blocks[b].push(block.clone());
            }
            longs.push(r.value);
        }
        let name = match method {
            GuidanceMethodConfig::Replacement => "ar_replacement",
            GuidanceMethodConfig::Reconstruction => "ar_reconstruction",
        };
        ar_runs.push((name.to_string(), longs, blocks, calls));
    }

    // Exact short-content references for the crop distance.
    let references: Vec<Vec<f64>> = (0..eval.count)
        .map(|i| ou.sample_path(crop_len, rng::mix(&[ctx.seed, SALT_REFERENCE, i as u64])))
        .collect();
    let wall_ms = started.elapsed().as_secs_f64() * 1000.0;

    let base_dir = ctx.out_dir.join("baseline");
    std::fs::create_dir_all(&base_dir)?;
    io::write_csv(&base_dir.join("diffcollage.csv"), None, &dc.samples)?;
    io::write_csv(&base_dir.join("concat.csv"), None, &concat)?;
    io::write_csv(&base_dir.join("reference.csv"), None, &references)?;
    for (name, longs, _, _) in &ar_runs {
        io::write_csv(&base_dir.join(format!("{name}.csv")), None, longs)?;
    }

    // Metrics.
    let reference_fn =
        |i: usize| -> diffcollage_core::Result<Vec<f64>> { Ok(references[i].clone()) };
    let mut reports: Vec<MetricReport> = Vec::new();
    let seam_positions: Vec<usize> = (1..blocks_needed)
        .map(|k| k * factor_len)
        .filter(|&p| p < total_dim)
        .collect();
    let mut tagged = |mut r: MetricReport, method: &str| {
        r.details.insert("method".into(), method.into());
        reports.push(r);
    };
    tagged(
        fd_plus(&dc.samples, &reference_fn, crop_len, eval.count, ctx.seed)?,
        "diffcollage",
    );
    tagged(
        fd_plus(&concat, &reference_fn, crop_len, eval.count, ctx.seed)?,
        "concat",
    );
    tagged(
        seam_statistic(&dc.samples, &seam_positions)?,
        "diffcollage",
    );
    tagged(seam_statistic(&concat, &seam_positions)?, "concat");
    // Composed-route per-block statistics over the factor windows.
    let dc_blocks: Vec<Vec<Vec<f64>>> = (0..num_blocks)
        .map(|j| {
            let coords = prepared.graph.factor_coords(j);
            dc.samples
                .iter()
                .map(|s| coords.iter().map(|&c| s[c]).collect())
                .collect()
        })
        .collect();
    for r in drift_profile(&dc_blocks)? {
        tagged(r, "diffcollage");
    }
    for (name, longs, blocks, _) in &ar_runs {
        tagged(
            fd_plus(longs, &reference_fn, crop_len, eval.count, ctx.seed)?,
            name,
        );
        tagged(seam_statistic(longs, &seam_positions)?, name);
        for r in drift_profile(blocks)? {
            tagged(r, name);
        }
    }

    io::write_metric_csv(&base_dir.join("baseline_metrics.csv"), &reports)?;
    let dc_rounds = dc.score_calls_per_sample;
    let mut counters = serde_json::json!({
        "diffcollage_rounds_per_sample": dc_rounds,
        "nodes_per_round": composed.nodes_per_round(),
        "samples": count,
    });
    for (name, _, _, calls) in &ar_runs {
        counters[format!("{name}_sequential_calls_per_sample")] =
            serde_json::json!(calls);
        counters[format!("{name}_speedup_rounds")] =
            serde_json::json!(*calls as f64 / dc_rounds as f64);
    }
    let summary = serde_json::json!({
        "counters": counters,
        "metrics": io::reports_to_json(&reports),
    });
    io::write_json(&base_dir.join("baseline_metrics.json"), &summary)?;
    io::write_json(
        &base_dir.join("baseline_timing.json"),
        &serde_json::json!({ "wall_ms": wall_ms }),
    )?;
    println!(
        "baseline comparison over {count} samples written to {}",
        base_dir.display()
    );
    Ok(exit::OK)
}

fn collect<T>(results: Vec<diffcollage_core::Result<T>>) -> anyhow::Result<Vec<T>> {
    results
        .into_iter()
        .map(|r| r.map_err(Into::into))
        .collect()
}
