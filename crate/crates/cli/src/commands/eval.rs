//! `eval`: recompute metrics from previously written sample CSVs, without
//! resampling. The eval section's crop length applies, so metrics can be
//! re-run at new crop sizes.

use anyhow::Context;
use diffcollage_core::eval::{drift_profile, fd_plus, seam_statistic, MetricReport};

use crate::commands::{prepare, Ctx};
use crate::config::GraphConfig;
use crate::{exit, io};

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let Some(prepared) = prepare(ctx)? else {
        return Ok(exit::VALIDATION);
    };
    let eval = ctx
        .config
        .eval
        .as_ref()
        .context("config has no eval section")?;
    let mut reports: Vec<MetricReport> = Vec::new();
    let base_dir = ctx.out_dir.join("baseline");
    let tagged = |mut r: MetricReport, method: &str, reports: &mut Vec<MetricReport>| {
        r.details.insert("method".into(), method.into());
        reports.push(r);
    };

    let reference: Option<Vec<Vec<f64>>> = {
        let path = base_dir.join("reference.csv");
        if path.exists() {
            Some(io::read_csv(&path)?)
        } else {
            None
        }
    };

    let mut evaluated_any = false;
    for name in ["diffcollage", "concat", "ar_replacement", "ar_reconstruction"] {
        let path = base_dir.join(format!("{name}.csv"));
        if !path.exists() {
            continue;
        }
        evaluated_any = true;
        let longs = io::read_csv(&path)?;
        if let Some(refs) = &reference {
            let crop = eval.crop_len;
            anyhow::ensure!(
                refs.first().map(|r| r.len()) == Some(crop)
                    || refs.first().map(|r| r.len() >= crop).unwrap_or(false),
                "reference samples are shorter than crop_len {crop}"
            );
            let reference_fn = |i: usize| -> diffcollage_core::Result<Vec<f64>> {
                Ok(refs[i % refs.len()][..crop].to_vec())
            };
            let count = eval.count.min(refs.len());
            tagged(
                fd_plus(&longs, &reference_fn, crop, count, ctx.seed)?,
                name,
                &mut reports,
            );
        }
        if let GraphConfig::Chain { factor_len, .. } = ctx.config.graph {
            let total = prepared.graph.total_dim();
            let seams: Vec<usize> = (1..total.div_ceil(factor_len))
                .map(|k| k * factor_len)
                .filter(|&p| p < total)
                .collect();
            if !seams.is_empty() {
                tagged(seam_statistic(&longs, &seams)?, name, &mut reports);
            }
            let blocks: Vec<Vec<Vec<f64>>> = (0..prepared.graph.num_factors())
                .map(|j| {
                    let coords = prepared.graph.factor_coords(j);
                    longs
                        .iter()
                        .map(|s| coords.iter().map(|&c| s[c]).collect())
                        .collect()
                })
                .collect();
            if blocks.len() >= 2 {
                for r in drift_profile(&blocks)? {
                    tagged(r, name, &mut reports);
                }
            }
        }
    }

    // Plain sample output: seam and drift over the factor windows.
    let samples_path = ctx.out_dir.join("samples.csv");
    if samples_path.exists() {
        evaluated_any = true;
        let longs = io::read_csv(&samples_path)?;
        let blocks: Vec<Vec<Vec<f64>>> = (0..prepared.graph.num_factors())
            .map(|j| {
                let coords = prepared.graph.factor_coords(j);
                longs
                    .iter()
                    .map(|s| coords.iter().map(|&c| s[c]).collect())
                    .collect()
            })
            .collect();
        if blocks.len() >= 2 {
            for r in drift_profile(&blocks)? {
                tagged(r, "samples", &mut reports);
            }
        }
        if let Some(refs) = &reference {
            let crop = eval.crop_len;
            let reference_fn = |i: usize| -> diffcollage_core::Result<Vec<f64>> {
                Ok(refs[i % refs.len()][..crop].to_vec())
            };
            let count = eval.count.min(refs.len());
            tagged(
                fd_plus(&longs, &reference_fn, crop, count, ctx.seed)?,
                "samples",
                &mut reports,
            );
        }
    }

    anyhow::ensure!(
        evaluated_any,
        "no sample CSVs found under {} — run `sample` or `baseline` first",
        ctx.out_dir.display()
    );
    io::write_metric_csv(&ctx.out_dir.join("eval_metrics.csv"), &reports)?;
    io::write_json(
        &ctx.out_dir.join("eval_metrics.json"),
        &io::reports_to_json(&reports),
    )?;
    println!(
        "{} metric reports written to {}",
        reports.len(),
        ctx.out_dir.join("eval_metrics.json").display()
    );
    Ok(exit::OK)
}
