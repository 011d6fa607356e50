//! Resolves the models section of a config into per-node score bindings.

use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use diffcollage_core::collage::NodeBinding;
use diffcollage_core::conditioning::slerp;
use diffcollage_core::graph::{FactorGraph, GaussianMarginal, NodeKind, NodeRef};
use diffcollage_core::linalg::Matrix;
use diffcollage_core::ou::OuProcess;
use diffcollage_core::schedule::NoiseSchedule;
use diffcollage_core::scoremodel::{GaussianScoreModel, GmmScoreModel, MlpScoreModel, ScoreModel};
use diffcollage_core::testbed;

use crate::config::{BusyMode, ConditionsConfig, ModelConfig, ModelsConfig};

/// Bindings for every participating node, plus the exact Gaussian marginals
/// when all bound models are analytic Gaussians (which unlocks the dense
/// oracle route in sample metrics).
pub struct ResolvedModels {
    pub bindings: Vec<NodeBinding>,
    pub gaussian_marginals: Option<Vec<GaussianMarginal>>,
}

/// Wraps an exact score with a configurable per-call cost, standing in for
/// an expensive network. `Wait` blocks until the deadline, modeling a call
/// dispatched to an external accelerator; `Spin` burns CPU on this machine.
/// Output values are identical to the inner model either way.
pub struct HeavyScoreModel {
    inner: GaussianScoreModel,
    busy: std::time::Duration,
    mode: BusyMode,
}

impl ScoreModel for HeavyScoreModel {
    fn score(
        &self,
        u: &[f64],
        t: f64,
        condition: Option<&[f64]>,
    ) -> diffcollage_core::Result<Vec<f64>> {
        let out = self.inner.score(u, t, condition)?;
        match self.mode {
            BusyMode::Wait => std::thread::sleep(self.busy),
            BusyMode::Spin => {
                let deadline = std::time::Instant::now() + self.busy;
                while std::time::Instant::now() < deadline {
                    std::hint::spin_loop();
                }
            }
        }
        Ok(out)
    }
}

fn node_key(node: NodeRef) -> String {
    format!("{}", node.index)
}

/// Builds one model for a node of the given coordinate set.
fn build_model(
    spec: &ModelConfig,
    node: NodeRef,
    coords: &[usize],
    schedule: NoiseSchedule,
    config_dir: &Path,
    testbed_cache: &mut Option<testbed::GraphGaussian>,
    graph: &Arc<FactorGraph>,
) -> anyhow::Result<(Arc<dyn ScoreModel>, Option<GaussianMarginal>)> {
    let width = coords.len();
    Ok(match spec {
        ModelConfig::OuWindow { phi, sigma } => {
            let ou = OuProcess::new(*phi, *sigma)?;
            let model = ou.window_model(width, schedule)?;
            let marginal =
                GaussianMarginal::new(node, vec![0.0; width], model.covariance().clone())?;
            (Arc::new(model), Some(marginal))
        }
        ModelConfig::Gaussian { mean, cov } => {
            if mean.len() != width {
                bail!(
                    "gaussian model for {node} has dimension {}, node covers {width} coordinates",
                    mean.len()
                );
            }
            let flat: Vec<f64> = cov.iter().flatten().copied().collect();
            let matrix = Matrix::from_rows(mean.len(), mean.len(), &flat)?;
            let model = GaussianScoreModel::new(mean.clone(), matrix.clone(), schedule)?;
            let marginal = GaussianMarginal::new(node, mean.clone(), matrix)?;
            (Arc::new(model), Some(marginal))
        }
        ModelConfig::Gmm { components } => {
            if width != 1 {
                bail!("gmm models are one-dimensional; {node} covers {width} coordinates");
            }
            let model = GmmScoreModel::one_dimensional(components, schedule)?;
            (Arc::new(model), None)
        }
        ModelConfig::MarkovTestbed { coupling, seed } => {
            if testbed_cache.is_none() {
                *testbed_cache = Some(testbed::markov_joint(graph.clone(), *coupling, *seed)?);
            }
            let gg = testbed_cache.as_ref().expect("cache just filled");
            let marginal = gg
                .marginals
                .iter()
                .find(|m| m.node == node)
                .expect("testbed carries every node")
                .clone();
            let model = GaussianScoreModel::new(
                marginal.mean.clone(),
                marginal.covariance.clone(),
                schedule,
            )?;
            (Arc::new(model), Some(marginal))
        }
        ModelConfig::Checkpoint { path } => {
            let resolved = if path.is_relative() {
                config_dir.join(path)
            } else {
                path.clone()
            };
            if !resolved.exists() {
                bail!("checkpoint path {} does not exist", resolved.display());
            }
            let model = crate::io::load_checkpoint_file(&resolved)?;
            // Fail now, not at sampling time, if no head serves this node.
            model
                .score(&vec![0.0; width], schedule.sigma_max(), None)
                .with_context(|| {
                    format!("checkpoint {} cannot serve {node}", resolved.display())
                })?;
            (Arc::new(model), None)
        }
        ModelConfig::MlpRandom {
            hidden,
            cond_dim,
            seed,
        } => {
            let model = MlpScoreModel::init(width, *cond_dim, hidden, schedule, *seed)?;
            (Arc::new(model), None)
        }
        ModelConfig::Heavy {
            phi,
            sigma,
            busy_ms,
            mode,
        } => {
            let ou = OuProcess::new(*phi, *sigma)?;
            let model = HeavyScoreModel {
                inner: ou.window_model(width, schedule)?,
                busy: std::time::Duration::from_secs_f64(busy_ms.max(0.0) / 1000.0),
                mode: *mode,
            };
            (Arc::new(model), None)
        }
    })
}

fn condition_for(
    conditions: &ConditionsConfig,
    node: NodeRef,
    num_factors: usize,
) -> anyhow::Result<Option<Vec<f64>>> {
    let key = format!(
        "{}:{}",
        match node.kind {
            NodeKind::Factor => "factor",
            NodeKind::Variable => "variable",
        },
        node.index
    );
    if let Some(v) = conditions.per_node.get(&key) {
        return Ok(Some(v.clone()));
    }
    if let Some(endpoints) = &conditions.factor_slerp {
        let width = endpoints.from.len();
        return Ok(Some(match node.kind {
            NodeKind::Factor => {
                if num_factors <= 1 {
                    endpoints.from.clone()
                } else {
                    let tau = node.index as f64 / (num_factors - 1) as f64;
                    slerp(&endpoints.from, &endpoints.to, tau)?
                }
            }
            // Variables carry the null condition.
            NodeKind::Variable => vec![0.0; width],
        }));
    }
    Ok(None)
}

/// Resolves every non-zero-coefficient node to a model binding.
pub fn resolve(
    graph: &Arc<FactorGraph>,
    schedule: NoiseSchedule,
    models: &ModelsConfig,
    config_dir: &Path,
) -> anyhow::Result<ResolvedModels> {
    let coeffs = graph.bethe_coefficients();
    let mut bindings = Vec::new();
    let mut marginals = Vec::new();
    let mut all_gaussian = true;
    let mut cache = None;
    for node in graph.nodes() {
        if coeffs.coefficient(node) == 0.0 {
            continue;
        }
        let spec = match node.kind {
            NodeKind::Factor => models.factors.get(&node_key(node)),
            NodeKind::Variable => models.variables.get(&node_key(node)),
        }
        .unwrap_or(&models.default);
        let coords = graph.node_coords(node);
        let (model, marginal) =
            build_model(spec, node, coords, schedule, config_dir, &mut cache, graph)?;
        match marginal {
            Some(m) => marginals.push(m),
            None => all_gaussian = false,
        }
        let condition = match &models.conditions {
            Some(c) => condition_for(c, node, graph.num_factors())?,
            None => None,
        };
        bindings.push(match condition {
            Some(c) => NodeBinding::with_condition(node, model, c),
            None => NodeBinding::new(node, model),
        });
    }
    Ok(ResolvedModels {
        bindings,
        gaussian_marginals: all_gaussian.then_some(marginals),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelsConfig;
    use diffcollage_core::graph::build_chain;

    fn models_json(text: &str) -> ModelsConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn default_ou_binds_all_participating_nodes() {
        let graph = Arc::new(build_chain(3, 4, 2).unwrap());
        let schedule = NoiseSchedule::linear_ve(0.02, 20.0).unwrap();
        let models =
            models_json(r#"{"default": {"kind": "ou-window", "phi": 0.8, "sigma": 1.0}}"#);
        let resolved = resolve(&graph, schedule, &models, Path::new(".")).unwrap();
        // 3 factors + 2 interior variables; leaves excluded.
        assert_eq!(resolved.bindings.len(), 5);
        assert!(resolved.gaussian_marginals.is_some());
    }

    #[test]
    fn missing_checkpoint_is_named() {
        let graph = Arc::new(build_chain(2, 2, 1).unwrap());
        let schedule = NoiseSchedule::linear_ve(0.02, 20.0).unwrap();
        let models =
            models_json(r#"{"default": {"kind": "checkpoint", "path": "nope/missing.dcsm"}}"#);
        let err = resolve(&graph, schedule, &models, Path::new("/tmp")).unwrap_err();
        assert!(format!("{err}").contains("missing.dcsm"), "{err}");
    }

    #[test]
    fn slerp_conditions_follow_factor_index() {
        let graph = Arc::new(build_chain(3, 2, 1).unwrap());
        let schedule = NoiseSchedule::linear_ve(0.02, 20.0).unwrap();
        let models = models_json(
            r#"{
                "default": {"kind": "mlp-random", "hidden": [4], "cond_dim": 2, "seed": 1},
                "conditions": {"factor_slerp": {"from": [1.0, 0.0], "to": [0.0, 1.0]}}
            }"#,
        );
        let resolved = resolve(&graph, schedule, &models, Path::new(".")).unwrap();
        let f0 = resolved
            .bindings
            .iter()
            .find(|b| b.node == NodeRef::factor(0))
            .unwrap();
        assert_eq!(f0.condition.as_deref(), Some(&[1.0, 0.0][..]));
        let v1 = resolved
            .bindings
            .iter()
            .find(|b| b.node == NodeRef::variable(1))
            .unwrap();
        assert_eq!(v1.condition.as_deref(), Some(&[0.0, 0.0][..]));
        assert!(resolved.gaussian_marginals.is_none());
    }
}
