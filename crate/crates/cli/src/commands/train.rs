//! `train`: fit node score networks by denoising score matching and write
//! checkpoints plus the loss curves.

use std::collections::BTreeMap;

use anyhow::{bail, Context};
use diffcollage_core::graph::{NodeKind, NodeRef};
use diffcollage_core::ou::OuProcess;
use diffcollage_core::rng::{self, tag};
use diffcollage_core::scoremodel::{
    train_collage, train_shift_invariant, Dataset, DsmConfig,
};

use crate::commands::{prepare, Ctx};
use crate::config::DatasetConfig;
use crate::{exit, io};

fn node_file_name(node: NodeRef) -> String {
    match node.kind {
        NodeKind::Factor => format!("factor_{}.dcsm", node.index),
        NodeKind::Variable => format!("variable_{}.dcsm", node.index),
    }
}

fn node_column(node: NodeRef) -> String {
    match node.kind {
        NodeKind::Factor => format!("factor_{}", node.index),
        NodeKind::Variable => format!("variable_{}", node.index),
    }
}

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let Some(prepared) = prepare(ctx)? else {
        return Ok(exit::VALIDATION);
    };
    let train = ctx
        .config
        .train
        .as_ref()
        .context("config has no train section")?;
    let dsm = DsmConfig {
        iterations: train.iterations,
        batch_size: train.batch_size,
        learning_rate: train.learning_rate,
        seed: ctx.seed,
    };
    ctx.ensure_out_dir()?;
    let ckpt_dir = ctx.out_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    if train.shift_invariant {
        let dataset = match &train.dataset {
            DatasetConfig::Csv { path } => {
                let resolved = if path.is_relative() {
                    ctx.config_dir.join(path)
                } else {
                    path.clone()
                };
                Dataset::new(io::read_csv(&resolved)?)?
            }
            DatasetConfig::Ou { phi, sigma, count } => {
                let widths: Vec<usize> = (0..prepared.graph.num_factors())
                    .map(|j| prepared.graph.factor_coords(j).len())
                    .collect();
                let Some((&width, rest)) = widths.split_first() else {
                    bail!("graph has no factors");
                };
                if rest.iter().any(|&w| w != width) {
                    bail!("shift-invariant training needs equal factor widths");
                }
                let ou = OuProcess::new(*phi, *sigma)?;
                Dataset::new(
                    (0..*count)
                        .map(|i| ou.sample_path(width, rng::mix(&[ctx.seed, tag::DATA, i as u64])))
                        .collect(),
                )?
            }
        };
        let outcome =
            train_shift_invariant(&dataset, &train.hidden, prepared.schedule, &dsm, train.crop_probability)?;
        io::save_checkpoint_file(&ckpt_dir.join("shared.dcsm"), &outcome.model)?;
        let rows: Vec<Vec<f64>> = outcome
            .losses
            .iter()
            .enumerate()
            .map(|(i, &l)| vec![i as f64, l])
            .collect();
        io::write_csv(&ctx.out_dir.join("training_loss.csv"), Some("iteration,shared"), &rows)?;
        println!(
            "trained shared model: {} iterations ({} at half width), checkpoint {}",
            train.iterations,
            outcome.crop_steps,
            ckpt_dir.join("shared.dcsm").display()
        );
        return Ok(exit::OK);
    }

    // Independent model per participating node.
    let coeffs = prepared.graph.bethe_coefficients();
    let mut datasets: BTreeMap<NodeRef, Dataset> = BTreeMap::new();
    match &train.dataset {
        DatasetConfig::Csv { .. } => {
            bail!("csv datasets require shift_invariant training (one shared factor-width file)")
        }
        DatasetConfig::Ou { phi, sigma, count } => {
            let ou = OuProcess::new(*phi, *sigma)?;
            for node in prepared.graph.nodes() {
                if coeffs.coefficient(node) == 0.0 {
                    continue;
                }
                let width = prepared.graph.node_coords(node).len();
                let kind_tag = match node.kind {
                    NodeKind::Factor => 0u64,
                    NodeKind::Variable => 1u64,
                };
                let samples = (0..*count)
                    .map(|i| {
                        ou.sample_path(
                            width,
                            rng::mix(&[ctx.seed, tag::DATA, kind_tag, node.index as u64, i as u64]),
                        )
                    })
                    .collect();
                datasets.insert(node, Dataset::new(samples)?);
            }
        }
    }
    let pool = ctx.pool()?;
    let trained = train_collage(
        &pool,
        &prepared.graph,
        &datasets,
        &train.hidden,
        prepared.schedule,
        &dsm,
    )?;

    let mut header = String::from("iteration");
    let mut columns: Vec<&NodeRef> = trained.keys().collect();
    columns.sort();
    for node in &columns {
        header.push(',');
        header.push_str(&node_column(**node));
    }
    let rows: Vec<Vec<f64>> = (0..train.iterations)
        .map(|i| {
            let mut row = vec![i as f64];
            for node in &columns {
                row.push(trained[node].losses[i]);
            }
            row
        })
        .collect();
    io::write_csv(&ctx.out_dir.join("training_loss.csv"), Some(&header), &rows)?;

    for (node, outcome) in &trained {
        io::save_checkpoint_file(&ckpt_dir.join(node_file_name(*node)), &outcome.model)?;
    }
    println!(
        "trained {} node models into {}",
        trained.len(),
        ckpt_dir.display()
    );
    Ok(exit::OK)
}
