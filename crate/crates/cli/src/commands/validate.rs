//! `validate`: build the graph, run every structural check, resolve models.

use crate::commands::Ctx;
use crate::{exit, models};

pub fn run(ctx: &Ctx) -> anyhow::Result<i32> {
    let graph = ctx.config.graph.build()?;
    let report = graph.validate();
    if !report.is_empty() {
        for v in &report {
            println!("{v}");
        }
        return Ok(exit::VALIDATION);
    }
    // Model references must resolve (checkpoint files exist, dimensions fit).
    let schedule = ctx.config.schedule.build()?;
    let graph = std::sync::Arc::new(graph);
    let resolved = models::resolve(&graph, schedule, &ctx.config.models, &ctx.config_dir)?;
    println!(
        "OK: {} coordinates, {} factors, {} variables, {} bound nodes",
        graph.total_dim(),
        graph.num_factors(),
        graph.num_variables(),
        resolved.bindings.len()
    );
    Ok(exit::OK)
}
