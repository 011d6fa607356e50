//! `sample`: compose the joint score (optionally under observation
//! guidance) and generate a batch, with renders and oracle comparisons
//! where the models make them possible.

use diffcollage_core::collage::{
    composed_gaussian_oracle, ComposedScore, JointScore, ParallelScore,
};
use diffcollage_core::conditioning::Guided;
use diffcollage_core::eval::fit_gaussian;
use diffcollage_core::graph::Shape;
use diffcollage_core::sampler::sample_batch;

use crate::commands::{prepare, Ctx};
use crate::{exit, io, models};

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let Some(prepared) = prepare(ctx)? else {
        return Ok(exit::VALIDATION);
    };
    let resolved = models::resolve(
        &prepared.graph,
        prepared.schedule,
        &ctx.config.models,
        &ctx.config_dir,
    )?;
    let composed = ComposedScore::new(prepared.graph.clone(), resolved.bindings)?;
    let pool = ctx.pool()?;
    let score = ParallelScore {
        composed: &composed,
        exec: &pool,
    };
    let sampler_config = prepared.sampler_config(ctx)?;
    let count = ctx.config.sampler.count;

    // Observation guidance wraps the composed score when configured.
    let conditioning = ctx
        .config
        .conditioning
        .as_ref()
        .map(|c| -> anyhow::Result<_> {
            let op = c.build_operator(prepared.graph.total_dim())?;
            let y = c.load_observations(op.out_dim())?;
            let cfg = c.build_guidance()?;
            Ok((op, y, cfg))
        })
        .transpose()?;

    let started = std::time::Instant::now();
    let batch = match &conditioning {
        Some((op, y, cfg)) => {
            let guided = Guided {
                inner: &score,
                op,
                y,
                cfg: *cfg,
                schedule: prepared.schedule,
            };
            sample_batch(&pool, &guided, &prepared.schedule, &sampler_config, count)?
        }
        None => sample_batch(&pool, &score as &dyn JointScore, &prepared.schedule, &sampler_config, count)?,
    };
    let wall_ms = started.elapsed().as_secs_f64() * 1000.0;

    ctx.ensure_out_dir()?;
    io::write_csv(&ctx.out_dir.join("samples.csv"), None, &batch.samples)?;

    // Deterministic metrics; wall-clock lives in its own file.
    let fit = fit_gaussian(&batch.samples)?;
    let per_coord_var: Vec<f64> = (0..fit.mean.len())
        .map(|k| fit.covariance.get(k, k))
        .collect();
    let mut metrics = serde_json::json!({
        "samples": count,
        "dim": prepared.graph.total_dim(),
        "score_calls_per_sample": batch.score_calls_per_sample,
        "nodes_per_round": composed.nodes_per_round(),
        "workers": ctx.workers,
        "empirical": {
            "mean": fit.mean,
            "per_coordinate_variance": per_coord_var,
            "covariance_frobenius": fit.covariance.frobenius_norm(),
        },
    });
    if let Some(marginals) = &resolved.gaussian_marginals {
        let oracle = composed_gaussian_oracle(&prepared.graph, marginals, 0.0)?;
        if oracle.is_proper() {
            let target_mean = oracle.mean()?;
            let target_cov = oracle.covariance()?;
            let mean_err = fit
                .mean
                .iter()
                .zip(&target_mean)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            let cov_err = fit.covariance.sub(&target_cov)?.frobenius_norm()
                / target_cov.frobenius_norm();
            metrics["oracle"] = serde_json::json!({
                "proper": true,
                "mean_max_abs_error": mean_err,
                "covariance_frobenius_relative_error": cov_err,
            });
        } else {
            metrics["oracle"] = serde_json::json!({ "proper": false });
        }
    }
    io::write_json(&ctx.out_dir.join("sample_metrics.json"), &metrics)?;
    io::write_json(
        &ctx.out_dir.join("sample_timing.json"),
        &serde_json::json!({ "wall_ms": wall_ms }),
    )?;

    render(ctx, prepared.graph.layout().shape(), &batch.samples)?;
    println!(
        "wrote {} samples of dimension {} to {}",
        count,
        prepared.graph.total_dim(),
        ctx.out_dir.join("samples.csv").display()
    );
    Ok(exit::OK)
}

/// Portable image renders: 1D content as a strip image (one sample per
/// row), 2D as one PGM per sample, cubemaps as six faces plus a tinted
/// cross composite.
fn render(ctx: &Ctx, shape: Option<Shape>, samples: &[Vec<f64>]) -> anyhow::Result<()> {
    match shape {
        Some(Shape::Line { len }) => {
            let rows = samples.len().min(64);
            let mut values = Vec::with_capacity(rows * len);
            for s in &samples[..rows] {
                values.extend_from_slice(s);
            }
            io::write_pgm(&ctx.out_dir.join("samples.pgm"), len, rows, &values)?;
        }
        Some(Shape::Image { height, width }) => {
            for (i, s) in samples.iter().take(4).enumerate() {
                io::write_pgm(&ctx.out_dir.join(format!("sample_{i}.pgm")), width, height, s)?;
            }
        }
        Some(Shape::Cubemap { face_dim }) => {
            if let Some(first) = samples.first() {
                render_cubemap(ctx, face_dim, first)?;
            }
        }
        None => {}
    }
    Ok(())
}

fn render_cubemap(ctx: &Ctx, d: usize, sample: &[f64]) -> anyhow::Result<()> {
    let fs = d * d;
    for (f, name) in diffcollage_core::graph::CUBEMAP_FACES.iter().enumerate() {
        io::write_pgm(
            &ctx.out_dir.join(format!("sample0_face_{name}.pgm")),
            d,
            d,
            &sample[f * fs..(f + 1) * fs],
        )?;
    }
    // Cross layout (4d x 3d): U on top, L F R B in the middle row, D below.
    // Faces get a light tint so orientation is readable.
    let (w, h) = (4 * d, 3 * d);
    let mut rgb = vec![0u8; 3 * w * h];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in sample {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    // (face, cell column, cell row, tint rgb multipliers)
    let placement: [(usize, usize, usize, [f64; 3]); 6] = [
        (4, 1, 0, [0.8, 0.8, 1.0]), // U
        (2, 0, 1, [0.8, 1.0, 0.8]), // L
        (0, 1, 1, [1.0, 1.0, 1.0]), // F
        (3, 2, 1, [1.0, 0.9, 0.7]), // R
        (1, 3, 1, [1.0, 0.8, 0.8]), // B
        (5, 1, 2, [0.9, 0.9, 0.9]), // D
    ];
    for (face, cx, cy, tint) in placement {
        for y in 0..d {
            for x in 0..d {
                let v = sample[face * fs + y * d + x];
                let gray = 255.0 * (v - lo) / span;
                let px = (cy * d + y) * w + cx * d + x;
                for c in 0..3 {
                    rgb[3 * px + c] = (gray * tint[c]).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    io::write_ppm(&ctx.out_dir.join("sample0_cross.ppm"), w, h, &rgb)?;
    Ok(())
}
