//! Sampling on composed scores: moment recovery, conditioning exactness,
//! and the sequential-versus-parallel evaluation ledger.

use std::sync::Arc;

use diffcollage_core::collage::{composed_gaussian_oracle, JointScore, ParallelScore};
use diffcollage_core::conditioning::{
    autoregressive_outpaint, Guided, GuidanceConfig, LinearOperator,
};
use diffcollage_core::eval::fit_gaussian;
use diffcollage_core::exec::SerialExecutor;
use diffcollage_core::graph;
use diffcollage_core::ou::OuProcess;
use diffcollage_core::sampler::{sample, sample_batch, Method, SamplerConfig};
use diffcollage_core::schedule::NoiseSchedule;
use diffcollage_core::testbed::markov_joint;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear_ve(0.02, 20.0).unwrap()
}

/// Sampling the composed score recovers the composed Gaussian's own moments.
fn assert_moment_recovery(g: graph::FactorGraph, seed: u64, label: &str) {
    let schedule = sched();
    let gg = markov_joint(Arc::new(g), 0.35, seed).unwrap();
    let composed = gg.composed(schedule).unwrap();
    let oracle = composed_gaussian_oracle(&gg.graph, &gg.marginals, 0.0).unwrap();
    assert!(oracle.is_proper(), "{label}: testbed must be proper");
    let target_cov = oracle.covariance().unwrap();
    let target_mean = oracle.mean().unwrap();

    let grid = schedule.karras_grid(200, 7.0).unwrap();
    let cfg = SamplerConfig::new(grid, Method::EulerOde, 0.0, seed).unwrap();
    let n = 4096;
    let batch = sample_batch(&SerialExecutor, &composed, &schedule, &cfg, n).unwrap();
    let fit = fit_gaussian(&batch.samples).unwrap();

    let mean_err = fit
        .mean
        .iter()
        .zip(&target_mean)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(mean_err < 0.1, "{label}: mean error {mean_err}");
    let cov_err = fit.covariance.sub(&target_cov).unwrap().frobenius_norm();
    let scale = target_cov.frobenius_norm();
    assert!(
        cov_err < 0.15 * scale,
        "{label}: covariance Frobenius error {cov_err} vs scale {scale}"
    );
}

#[test]
fn chain_composed_sampling_recovers_moments() {
    assert_moment_recovery(graph::build_chain(4, 4, 2).unwrap(), 800, "chain");
}

#[test]
fn cycle_composed_sampling_recovers_moments() {
    assert_moment_recovery(graph::build_cycle(4, 4, 2).unwrap(), 801, "cycle");
}

#[test]
fn cubemap_composed_sampling_recovers_moments() {
    assert_moment_recovery(graph::build_cubemap(1).unwrap(), 802, "cubemap");
}

#[test]
fn replacement_inpainting_pins_observed_coordinates() {
    // Half the chain coordinates observed; after the final projection jump
    // the output matches the observation to machine precision.
    let schedule = sched();
    let gg = markov_joint(Arc::new(graph::build_chain(3, 4, 2).unwrap()), 0.4, 4).unwrap();
    let composed = gg.composed(schedule).unwrap();
    let n = gg.graph.total_dim();
    let keep: Vec<usize> = (0..n).step_by(2).collect();
    let op = LinearOperator::mask(n, keep.clone()).unwrap();
    let y: Vec<f64> = keep.iter().map(|&k| 0.3 * k as f64 - 0.5).collect();
    let guided = Guided {
        inner: &composed,
        op: &op,
        y: &y,
        cfg: GuidanceConfig::replacement(),
        schedule,
    };
    let grid = schedule.karras_grid(40, 7.0).unwrap();
    let cfg = SamplerConfig::new(grid, Method::EulerOde, 0.0, 21).unwrap(); // final_denoise on
    let out = sample(&guided, &schedule, &cfg).unwrap();
    for (&k, &yi) in keep.iter().zip(&y) {
        assert!(
            (out.value[k] - yi).abs() < 1e-12,
            "coordinate {k}: {} vs {yi}",
            out.value[k]
        );
    }
    // Unobserved coordinates are genuinely generated, not zero.
    assert!(out.value[1].is_finite());
}

#[test]
fn sequential_baseline_costs_blocks_times_steps() {
    // The outpainting baseline spends L·K sequential score calls where the
    // composed route spends K rounds of parallel node evaluations.
    let schedule = sched();
    let ou = OuProcess::new(0.8, 1.0).unwrap();
    let block = 6;
    let overlap = 3;
    let steps = 50;
    let model = ou.window_model(block, schedule).unwrap();
    let grid = schedule.karras_grid(steps, 7.0).unwrap();
    let cfg = SamplerConfig::new(grid.clone(), Method::EulerOde, 0.0, 3)
        .unwrap()
        .with_final_denoise(false);
    for blocks in [2usize, 4, 8] {
        let out = autoregressive_outpaint(
            &model,
            None,
            block,
            blocks,
            overlap,
            &GuidanceConfig::replacement(),
            &schedule,
            &cfg,
        )
        .unwrap();
        assert_eq!(out.score_calls, blocks * steps, "L = {blocks}");
    }

    // Composed route: K joint evaluations, each one parallel round.
    let g = Arc::new(graph::build_chain(4, block, overlap).unwrap());
    let gg = markov_joint(g, 0.4, 5).unwrap();
    let composed = gg.composed(schedule).unwrap();
    let out = sample(&composed, &schedule, &cfg).unwrap();
    assert_eq!(out.score_calls, steps);
    assert_eq!(composed.nodes_per_round(), 4 + 3);
}

#[test]
fn parallel_score_wrapper_matches_serial() {
    let schedule = sched();
    let gg = markov_joint(Arc::new(graph::build_cycle(5, 4, 2).unwrap()), 0.4, 6).unwrap();
    let composed = gg.composed(schedule).unwrap();
    let wrapped = ParallelScore {
        composed: &composed,
        exec: &SerialExecutor,
    };
    let u: Vec<f64> = (0..gg.graph.total_dim()).map(|k| 0.1 * k as f64).collect();
    let a = composed.score(&u, 1.0).unwrap();
    let b = wrapped.score(&u, 1.0).unwrap();
    assert_eq!(a, b);
}
