//! Cross-module checks of score composition against dense oracles.

use std::sync::Arc;

use diffcollage_core::collage::{composed_gaussian_oracle, ComposedScore, JointScore, NodeBinding};
use diffcollage_core::graph::{self, bethe_entropy, NodeRef};
use diffcollage_core::rng;
use diffcollage_core::schedule::NoiseSchedule;
use diffcollage_core::scoremodel::{MlpScoreModel, ScoreModel};
use diffcollage_core::testbed::markov_joint;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear_ve(0.05, 10.0).unwrap()
}

/// Composed score agrees with the dense lifted-precision route at random
/// probes across the noise range.
fn assert_route_consistency(gg: &diffcollage_core::testbed::GraphGaussian, probes: u64, tol: f64) {
    let schedule = sched();
    let composed = gg.composed(schedule).unwrap();
    let n = gg.graph.total_dim();
    for p in 0..probes {
        let t = 0.05 + 9.95 * rng::unit(rng::mix(&[11, p]));
        let u: Vec<f64> = (0..n)
            .map(|k| 3.0 * rng::standard_normal(rng::mix(&[12, p, k as u64])))
            .collect();
        let sigma = schedule.sigma(t).unwrap();
        let oracle = composed_gaussian_oracle(&gg.graph, &gg.marginals, sigma).unwrap();
        let a = composed.score(&u, t).unwrap();
        let b = oracle.score(&u).unwrap();
        let worst = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < tol, "probe {p}: max-abs gap {worst}");
    }
}

#[test]
fn chain_composition_exact_on_trees() {
    // Random chain models: the two evaluation routes agree everywhere, and
    // at zero noise the composed precision recovers the true joint exactly.
    for trial in 0..8u64 {
        let key = |t: u64| rng::mix(&[2024, trial, t]);
        let m = 3 + rng::index(key(0), 4);
        let f = 3 + rng::index(key(1), 3);
        let v = 1 + rng::index(key(2), f - 2);
        let gg = markov_joint(
            Arc::new(graph::build_chain(m, f, v).unwrap()),
            0.5,
            key(3),
        )
        .unwrap();
        assert_route_consistency(&gg, 25, 1e-9);
        let oracle = composed_gaussian_oracle(&gg.graph, &gg.marginals, 0.0).unwrap();
        let gap = oracle
            .covariance()
            .unwrap()
            .sub(&gg.covariance)
            .unwrap()
            .max_abs();
        assert!(gap < 1e-9, "chain {m}/{f}/{v}: zero-noise gap {gap}");
        // The composed score at near-zero noise equals the true joint score.
        let u: Vec<f64> = (0..gg.graph.total_dim())
            .map(|k| rng::standard_normal(rng::mix(&[3, trial, k as u64])))
            .collect();
        let composed_zero = oracle.score(&u).unwrap();
        let true_zero = gg.joint_score(&u, 0.0).unwrap();
        for (a, b) in composed_zero.iter().zip(&true_zero) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn cycle_and_cubemap_routes_agree() {
    for (label, g) in [
        ("cycle3", graph::build_cycle(3, 4, 2).unwrap()),
        ("cycle4", graph::build_cycle(4, 4, 2).unwrap()),
        ("cycle6", graph::build_cycle(6, 5, 2).unwrap()),
        ("cubemap1", graph::build_cubemap(1).unwrap()),
        ("cubemap2", graph::build_cubemap(2).unwrap()),
    ] {
        let gg = markov_joint(Arc::new(g), 0.4, rng::mix(&[7, label.len() as u64])).unwrap();
        assert_route_consistency(&gg, 20, 1e-9);
        let _ = label;
    }
}

#[test]
fn cycle_composition_is_biased_against_true_joint() {
    // On a loopy graph the zero-noise composed covariance differs from the
    // true joint covariance: the approximation has measurable bias.
    let gg = markov_joint(Arc::new(graph::build_cycle(4, 4, 2).unwrap()), 0.5, 99).unwrap();
    let oracle = composed_gaussian_oracle(&gg.graph, &gg.marginals, 0.0).unwrap();
    assert!(oracle.is_proper(), "testbed must stay proper");
    let gap = oracle
        .covariance()
        .unwrap()
        .sub(&gg.covariance)
        .unwrap()
        .max_abs();
    assert!(gap > 1e-6, "expected visible bias, got {gap}");
}

#[test]
fn bethe_entropy_exact_on_chains() {
    for trial in 0..6u64 {
        let key = |t: u64| rng::mix(&[31, trial, t]);
        let m = 2 + rng::index(key(0), 5);
        let f = 3 + rng::index(key(1), 3);
        let v = 1 + rng::index(key(2), f - 2);
        let gg = markov_joint(Arc::new(graph::build_chain(m, f, v).unwrap()), 0.5, key(3)).unwrap();
        let bethe = bethe_entropy(&gg.graph, &gg.marginals).unwrap();
        let k = gg.graph.total_dim() as f64;
        let exact = 0.5
            * (k * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
                + gg.covariance.cholesky().unwrap().log_det());
        assert!(
            (bethe - exact).abs() < 1e-9,
            "chain {m}/{f}/{v}: bethe {bethe} vs exact {exact}"
        );
    }
}

#[test]
fn bethe_entropy_gap_on_cycles() {
    let gg = markov_joint(Arc::new(graph::build_cycle(4, 4, 2).unwrap()), 0.5, 13).unwrap();
    let bethe = bethe_entropy(&gg.graph, &gg.marginals).unwrap();
    let k = gg.graph.total_dim() as f64;
    let exact = 0.5
        * (k * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + gg.covariance.cholesky().unwrap().log_det());
    assert!(
        (bethe - exact).abs() > 1e-6,
        "cycle entropy gap unexpectedly small: {}",
        (bethe - exact).abs()
    );
}

#[test]
fn conditioned_chain_runs_end_to_end() {
    // Style-bridging smoke: factor conditions interpolate between two
    // anchors, variable conditions stay at the null vector; the composed
    // score must sample to finite output.
    use diffcollage_core::conditioning::slerp;
    use diffcollage_core::sampler::{sample, Method, SamplerConfig};

    let schedule = sched();
    let g = Arc::new(graph::build_chain(4, 3, 1).unwrap());
    let coeffs = g.bethe_coefficients();
    let cond_dim = 2;
    let a = [1.0, 0.0];
    let b = [0.0, 2.0];
    let m = g.num_factors();
    let mut bindings = Vec::new();
    for node in g.nodes() {
        if coeffs.coefficient(node) == 0.0 {
            continue;
        }
        let dim = g.node_coords(node).len();
        let model: Arc<dyn ScoreModel> =
            Arc::new(MlpScoreModel::init(dim, cond_dim, &[8], schedule, 5 + node.index as u64).unwrap());
        let condition = match node.kind {
            diffcollage_core::graph::NodeKind::Factor => {
                slerp(&a, &b, node.index as f64 / (m - 1) as f64).unwrap()
            }
            diffcollage_core::graph::NodeKind::Variable => vec![0.0; cond_dim],
        };
        bindings.push(NodeBinding::with_condition(node, model, condition));
    }
    let composed = ComposedScore::new(g.clone(), bindings).unwrap();
    let grid = schedule.karras_grid(12, 7.0).unwrap();
    let cfg = SamplerConfig::new(grid, Method::EulerOde, 0.0, 17).unwrap();
    let out = sample(&composed, &schedule, &cfg).unwrap();
    assert_eq!(out.value.len(), g.total_dim());
    assert!(out.value.iter().all(|v| v.is_finite()));
}

#[test]
fn stale_binding_errors_carry_node_identity() {
    // A model that fails numerically reports which node it served.
    struct Broken;
    impl ScoreModel for Broken {
        fn score(&self, _u: &[f64], _t: f64, _c: Option<&[f64]>) -> diffcollage_core::Result<Vec<f64>> {
            Err(diffcollage_core::Error::Numeric("synthetic failure".into()))
        }
    }
    let g = Arc::new(graph::build_chain(1, 3, 1).unwrap());
    let composed = ComposedScore::new(
        g,
        vec![NodeBinding::new(NodeRef::factor(0), Arc::new(Broken))],
    )
    .unwrap();
    let err = composed.score(&[0.0, 0.0, 0.0], 1.0).err().unwrap();
    assert!(format!("{err}").contains("factor 0"), "{err}");
}
