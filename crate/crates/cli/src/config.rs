//! Experiment configuration: one JSON file describes the graph, schedule,
//! models, sampler, and the optional training / conditioning / evaluation /
//! baseline / bench sections.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use diffcollage_core::conditioning::{
    GradientMode, GuidanceConfig, GuidanceMethod, LambdaSchedule, LinearOperator,
};
use diffcollage_core::graph::{self, FactorGraph, JointLayout};
use diffcollage_core::sampler::Method;
use diffcollage_core::schedule::NoiseSchedule;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphConfig,
    pub schedule: ScheduleConfig,
    pub models: ModelsConfig,
    #[serde(default)]
    pub sampler: SamplerConfigSection,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub conditioning: Option<ConditioningConfig>,
    #[serde(default)]
    pub eval: Option<EvalConfig>,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
    #[serde(default)]
    pub bench: Option<BenchConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_seed() -> u64 {
    0
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GraphConfig {
    Chain {
        factors: usize,
        factor_len: usize,
        overlap: usize,
    },
    Cycle {
        factors: usize,
        factor_len: usize,
        overlap: usize,
    },
    Grid {
        rows: usize,
        cols: usize,
        patch: usize,
        overlap: usize,
    },
    Cubemap {
        face_dim: usize,
    },
    Custom {
        total_dim: usize,
        factors: Vec<Vec<usize>>,
        variables: Vec<Vec<usize>>,
    },
}

impl GraphConfig {
    pub fn build(&self) -> anyhow::Result<FactorGraph> {
        let g = match self {
            GraphConfig::Chain {
                factors,
                factor_len,
                overlap,
            } => graph::build_chain(*factors, *factor_len, *overlap)?,
            GraphConfig::Cycle {
                factors,
                factor_len,
                overlap,
            } => graph::build_cycle(*factors, *factor_len, *overlap)?,
            GraphConfig::Grid {
                rows,
                cols,
                patch,
                overlap,
            } => graph::build_grid(*rows, *cols, *patch, *overlap)?,
            GraphConfig::Cubemap { face_dim } => graph::build_cubemap(*face_dim)?,
            GraphConfig::Custom {
                total_dim,
                factors,
                variables,
            } => FactorGraph::new(
                JointLayout::flat(*total_dim)?,
                factors.clone(),
                variables.clone(),
            )?,
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_kind")]
    pub kind: ScheduleKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    LinearVe,
    GeometricVe,
}

fn default_kind() -> ScheduleKind {
    ScheduleKind::LinearVe
}

fn default_steps() -> usize {
    80
}

fn default_rho() -> f64 {
    7.0
}

impl ScheduleConfig {
    pub fn build(&self) -> anyhow::Result<NoiseSchedule> {
        Ok(match self.kind {
            ScheduleKind::LinearVe => NoiseSchedule::linear_ve(self.sigma_min, self.sigma_max)?,
            ScheduleKind::GeometricVe => {
                NoiseSchedule::geometric_ve(self.sigma_min, self.sigma_max)?
            }
        })
    }
}

/// Model source for a node (or for all nodes via `default`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Stationary OU window of the node's width: exact Gaussian score.
    OuWindow { phi: f64, sigma: f64 },
    /// Explicit Gaussian (mean and dense covariance, node-local order).
    Gaussian { mean: Vec<f64>, cov: Vec<Vec<f64>> },
    /// 1D Gaussian mixture: (weight, mean, variance) per component.
    Gmm { components: Vec<(f64, f64, f64)> },
    /// Exact marginals of a graph-factorized Gaussian built on this very
    /// graph; enables oracle deltas in the sample metrics.
    MarkovTestbed { coupling: f64, seed: u64 },
    /// Trained network from a checkpoint file.
    Checkpoint { path: PathBuf },
    /// Freshly initialized (untrained) network; for plumbing smoke runs.
    MlpRandom {
        hidden: Vec<usize>,
        #[serde(default)]
        cond_dim: usize,
        seed: u64,
    },
    /// Wraps an OU window score with configurable per-call cost; only for
    /// latency benchmarking.
    Heavy {
        phi: f64,
        sigma: f64,
        busy_ms: f64,
        #[serde(default)]
        mode: BusyMode,
    },
}

/// How the heavy model burns its per-call budget: `Wait` blocks until the
/// deadline (models calls dispatched to an external accelerator), `Spin`
/// burns CPU on this machine.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BusyMode {
    #[default]
    Wait,
    Spin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    /// Model used by every node without an explicit override.
    pub default: ModelConfig,
    /// Per-factor overrides, keyed by index (as a string, JSON maps).
    #[serde(default)]
    pub factors: std::collections::BTreeMap<String, ModelConfig>,
    /// Per-variable overrides.
    #[serde(default)]
    pub variables: std::collections::BTreeMap<String, ModelConfig>,
    #[serde(default)]
    pub conditions: Option<ConditionsConfig>,
}

/// Per-node condition vectors. Factor conditions interpolate spherically
/// between `from` and `to` along the chain index; variables get the null
/// (all-zeros) vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    pub factor_slerp: Option<SlerpEndpoints>,
    #[serde(default)]
    pub per_node: std::collections::BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlerpEndpoints {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfigSection {
    #[serde(default = "default_method")]
    pub method: SamplerMethod,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_true")]
    pub final_denoise: bool,
    #[serde(default = "default_count")]
    pub count: usize,
}

impl Default for SamplerConfigSection {
    fn default() -> Self {
        SamplerConfigSection {
            method: default_method(),
            eta: 0.0,
            final_denoise: true,
            count: default_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerMethod {
    EulerOde,
    EulerMaruyama,
    Heun,
}

fn default_method() -> SamplerMethod {
    SamplerMethod::EulerOde
}

fn default_true() -> bool {
    true
}

fn default_count() -> usize {
    64
}

impl SamplerMethod {
    pub fn to_core(self) -> Method {
        match self {
            SamplerMethod::EulerOde => Method::EulerOde,
            SamplerMethod::EulerMaruyama => Method::EulerMaruyama,
            SamplerMethod::Heun => Method::Heun,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default)]
    pub shift_invariant: bool,
    #[serde(default = "default_crop")]
    pub crop_probability: f64,
    pub dataset: DatasetConfig,
}

fn default_crop() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Draws stationary OU windows matching each trained node's width.
    Ou { phi: f64, sigma: f64, count: usize },
    /// One sample per CSV row; only valid with `shift_invariant` (a single
    /// factor-width dataset shared by all nodes).
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningConfig {
    pub method: GuidanceMethodConfig,
    pub operator: OperatorConfig,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_lambda_schedule")]
    pub lambda_schedule: LambdaScheduleConfig,
    #[serde(default = "default_gradient_mode")]
    pub gradient_mode: GradientModeConfig,
    pub observations: ObservationsConfig,
}

fn default_lambda() -> f64 {
    1.0
}

fn default_lambda_schedule() -> LambdaScheduleConfig {
    LambdaScheduleConfig::SigmaScaled
}

fn default_gradient_mode() -> GradientModeConfig {
    GradientModeConfig::ExactVjp
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMethodConfig {
    Replacement,
    Reconstruction,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaScheduleConfig {
    Constant,
    SigmaScaled,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientModeConfig {
    ExactVjp,
    IdentityJacobian,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    Mask { keep: Vec<usize> },
    Boxdown { block: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservationsConfig {
    Inline { values: Vec<f64> },
    Csv { path: PathBuf },
}

impl ConditioningConfig {
    pub fn build_operator(&self, dim: usize) -> anyhow::Result<LinearOperator> {
        Ok(match &self.operator {
            OperatorConfig::Mask { keep } => LinearOperator::mask(dim, keep.clone())?,
            OperatorConfig::Boxdown { block } => LinearOperator::box_down(dim, *block)?,
        })
    }

    pub fn build_guidance(&self) -> anyhow::Result<GuidanceConfig> {
        let schedule = match self.lambda_schedule {
            LambdaScheduleConfig::Constant => LambdaSchedule::Constant,
            LambdaScheduleConfig::SigmaScaled => LambdaSchedule::SigmaScaled,
        };
        let mode = match self.gradient_mode {
            GradientModeConfig::ExactVjp => GradientMode::ExactVjp,
            GradientModeConfig::IdentityJacobian => GradientMode::IdentityJacobian,
        };
        Ok(match self.method {
            GuidanceMethodConfig::Replacement => GuidanceConfig::replacement(),
            GuidanceMethodConfig::Reconstruction => {
                GuidanceConfig::reconstruction(self.lambda, schedule, mode)?
            }
        })
    }

    pub fn load_observations(&self, expected: usize) -> anyhow::Result<Vec<f64>> {
        let values = match &self.observations {
            ObservationsConfig::Inline { values } => values.clone(),
            ObservationsConfig::Csv { path } => {
                let rows = crate::io::read_csv(path)?;
                rows.into_iter().flatten().collect()
            }
        };
        if values.len() != expected {
            bail!(
                "observation vector has {} entries, operator expects {expected}",
                values.len()
            );
        }
        Ok(values)
    }
}

impl GuidanceMethodConfig {
    pub fn to_core(self) -> GuidanceMethod {
        match self {
            GuidanceMethodConfig::Replacement => GuidanceMethod::Replacement,
            GuidanceMethodConfig::Reconstruction => GuidanceMethod::Reconstruction,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub crop_len: usize,
    #[serde(default = "default_eval_count")]
    pub count: usize,
}

fn default_eval_count() -> usize {
    4096
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    /// Number of long samples per method.
    pub count: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<GuidanceMethodConfig>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

fn default_methods() -> Vec<GuidanceMethodConfig> {
    vec![GuidanceMethodConfig::Replacement]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_lengths")]
    pub lengths: Vec<usize>,
    #[serde(default = "default_workers")]
    pub workers: Vec<usize>,
    #[serde(default = "default_busy_ms")]
    pub busy_ms: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default)]
    pub mode: BusyMode,
}

fn default_lengths() -> Vec<usize> {
    vec![2, 4, 8, 16]
}

fn default_workers() -> Vec<usize> {
    vec![1, 2, 4, 8]
}

fn default_busy_ms() -> f64 {
    5.0
}

fn default_rounds() -> usize {
    3
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses() {
        let text = r#"{
            "graph": {"type": "chain", "factors": 3, "factor_len": 4, "overlap": 2},
            "schedule": {"sigma_min": 0.02, "sigma_max": 20.0},
            "models": {"default": {"kind": "ou-window", "phi": 0.8, "sigma": 1.0}}
        }"#;
        let config: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(config.schedule.steps, 80);
        assert_eq!(config.sampler.count, 64);
        let g = config.graph.build().unwrap();
        assert_eq!(g.total_dim(), 8);
        assert!(g.validate().is_empty());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{
            "graph": {"type": "chain", "factors": 3, "factor_len": 4, "overlap": 2, "bogus": 1},
            "schedule": {"sigma_min": 0.02, "sigma_max": 20.0},
            "models": {"default": {"kind": "ou-window", "phi": 0.8, "sigma": 1.0}}
        }"#;
        assert!(serde_json::from_str::<ExperimentConfig>(text).is_err());
    }
}
