//! Score composition over a factor graph.
//!
//! [`ComposedScore`] binds one score model to every participating node and
//! evaluates the joint score of the full content: gather each node's
//! coordinates, evaluate its model (all nodes independently, hence in
//! parallel if an executor provides workers), then accumulate the weighted
//! results — factor scores with weight 1, variable scores with weight
//! `1 − degree`. Accumulation always runs single-threaded in node order
//! (factors ascending, then variables ascending), so the output is
//! bit-identical at any worker count; floating-point addition is not
//! associative, and reproducibility is part of the contract.
//!
//! For Gaussian node models the composition has a closed form — an affine
//! score with precision `J(σ) = Σ_j lift(J_fj) + Σ_i (1−d_i)·lift(J_xi)` —
//! assembled by [`composed_gaussian_oracle`] as an independent route for
//! testing. On acyclic graphs at σ = 0 that precision equals the true joint
//! precision; on loopy graphs it is the (possibly improper) approximation.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::{Executor, SerialExecutor};
use crate::graph::{BetheCoefficients, FactorGraph, GaussianMarginal, NodeKind, NodeRef};
use crate::linalg::Matrix;
use crate::scoremodel::ScoreModel;

/// Copies the node-local view `out[k] = u_joint[coords[k]]`.
pub fn gather(u_joint: &[f64], coords: &[usize]) -> Result<Vec<f64>> {
    coords
        .iter()
        .map(|&c| {
            u_joint.get(c).copied().ok_or_else(|| {
                Error::invalid(format!(
                    "gather index {c} out of range for joint vector of length {}",
                    u_joint.len()
                ))
            })
        })
        .collect()
}

/// Accumulates `target[coords[k]] += coeff * values[k]`.
pub fn scatter_add(
    target: &mut [f64],
    coords: &[usize],
    values: &[f64],
    coeff: f64,
) -> Result<()> {
    if coords.len() != values.len() {
        return Err(Error::Dimension {
            what: "scatter_add values",
            expected: coords.len(),
            got: values.len(),
        });
    }
    if coeff == 0.0 {
        return Ok(());
    }
    let len = target.len();
    for (&c, &v) in coords.iter().zip(values) {
        let slot = target.get_mut(c).ok_or_else(|| {
            Error::invalid(format!(
                "scatter index {c} out of range for target of length {len}"
            ))
        })?;
        *slot += coeff * v;
    }
    Ok(())
}

/// A score model bound to one graph node, with the node's resolved
/// condition vector (if any).
#[derive(Clone)]
pub struct NodeBinding {
    pub node: NodeRef,
    pub model: Arc<dyn ScoreModel>,
    pub condition: Option<Vec<f64>>,
}

impl NodeBinding {
    pub fn new(node: NodeRef, model: Arc<dyn ScoreModel>) -> Self {
        NodeBinding {
            node,
            model,
            condition: None,
        }
    }

    pub fn with_condition(node: NodeRef, model: Arc<dyn ScoreModel>, condition: Vec<f64>) -> Self {
        NodeBinding {
            node,
            model,
            condition: Some(condition),
        }
    }
}

/// A joint score function over the full content vector. The abstraction the
/// samplers and guidance wrappers work against.
pub trait JointScore: Sync {
    /// Length of the joint content vector.
    fn dim(&self) -> usize;

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>>;

    /// `(∂score/∂u)ᵀ · cotangent`; reconstruction guidance needs it.
    fn score_vjp(&self, u: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        let _ = (u, t, cotangent);
        Err(Error::Unsupported("score_vjp"))
    }
}

/// Joint score built from a plain function, mostly for tests and analytic
/// references.
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F> JointScore for FnScore<F>
where
    F: Fn(&[f64], f64) -> Result<Vec<f64>> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        (self.f)(u, t)
    }
}

/// Treats a single node model as the joint score of its own content block;
/// the building block of the autoregressive baseline.
pub struct NodeScore<'a> {
    pub model: &'a dyn ScoreModel,
    pub dim: usize,
    pub condition: Option<&'a [f64]>,
}

impl JointScore for NodeScore<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        self.model.score(u, t, self.condition)
    }

    fn score_vjp(&self, u: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.model.score_vjp(u, t, self.condition, cotangent)
    }
}

/// The composed joint score of a factor graph.
pub struct ComposedScore {
    graph: Arc<FactorGraph>,
    coefficients: BetheCoefficients,
    /// Sorted: factors ascending, then variables ascending. This is the
    /// fixed accumulation order.
    bindings: Vec<NodeBinding>,
}

impl ComposedScore {
    /// Validates completeness: every factor bound, every variable with a
    /// non-zero coefficient bound, and nothing bound to zero-coefficient
    /// nodes (their scores would be multiplied by zero anyway).
    pub fn new(graph: Arc<FactorGraph>, mut bindings: Vec<NodeBinding>) -> Result<Self> {
        let coefficients = graph.bethe_coefficients();
        for b in &bindings {
            let in_range = match b.node.kind {
                NodeKind::Factor => b.node.index < graph.num_factors(),
                NodeKind::Variable => b.node.index < graph.num_variables(),
            };
            if !in_range {
                return Err(Error::invalid(format!("binding for unknown {}", b.node)));
            }
            if coefficients.coefficient(b.node) == 0.0 {
                return Err(Error::invalid(format!(
                    "{} has coefficient 0 and must not be bound",
                    b.node
                )));
            }
        }
        bindings.sort_by_key(|b| (b.node.kind, b.node.index));
        for pair in bindings.windows(2) {
            if pair[0].node == pair[1].node {
                return Err(Error::invalid(format!("duplicate binding for {}", pair[0].node)));
            }
        }
        for node in graph.nodes() {
            if coefficients.coefficient(node) != 0.0
                && bindings.binary_search_by_key(&(node.kind, node.index), |b| {
                    (b.node.kind, b.node.index)
                })
                .is_err()
            {
                return Err(Error::invalid(format!("no binding for {node}")));
            }
        }
        Ok(ComposedScore {
            graph,
            coefficients,
            bindings,
        })
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn bindings(&self) -> &[NodeBinding] {
        &self.bindings
    }

    /// Number of node evaluations per joint score call — the work that one
    /// parallel round distributes.
    pub fn nodes_per_round(&self) -> usize {
        self.bindings.len()
    }

    /// Joint score with node evaluations distributed by `exec`.
    pub fn score_with<E: Executor>(&self, exec: &E, u: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_input(u)?;
        let locals = exec.map(self.bindings.len(), &|i| {
            let b = &self.bindings[i];
            let coords = self.graph.node_coords(b.node);
            let local = gather(u, coords)?;
            b.model
                .score(&local, t, b.condition.as_deref())
                .map_err(|e| attach_node(e, b.node))
        });
        let mut out = vec![0.0; u.len()];
        for (b, local) in self.bindings.iter().zip(locals) {
            let values = local?;
            let coords = self.graph.node_coords(b.node);
            if values.len() != coords.len() {
                return Err(Error::invalid(format!(
                    "model for {} returned {} values for {} coordinates",
                    b.node,
                    values.len(),
                    coords.len()
                )));
            }
            scatter_add(
                &mut out,
                coords,
                &values,
                self.coefficients.coefficient(b.node),
            )?;
        }
        Ok(out)
    }

    /// Joint score VJP with node evaluations distributed by `exec`. The
    /// composition is linear in the node scores, so the VJP is the same
    /// gather/scatter pattern over per-node VJPs.
    pub fn score_vjp_with<E: Executor>(
        &self,
        exec: &E,
        u: &[f64],
        t: f64,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        self.check_input(u)?;
        if cotangent.len() != u.len() {
            return Err(Error::Dimension {
                what: "joint vjp cotangent",
                expected: u.len(),
                got: cotangent.len(),
            });
        }
        let locals = exec.map(self.bindings.len(), &|i| {
            let b = &self.bindings[i];
            let coords = self.graph.node_coords(b.node);
            let local_u = gather(u, coords)?;
            let local_v = gather(cotangent, coords)?;
            b.model
                .score_vjp(&local_u, t, b.condition.as_deref(), &local_v)
                .map_err(|e| attach_node(e, b.node))
        });
        let mut out = vec![0.0; u.len()];
        for (b, local) in self.bindings.iter().zip(locals) {
            let values = local?;
            let coords = self.graph.node_coords(b.node);
            scatter_add(
                &mut out,
                coords,
                &values,
                self.coefficients.coefficient(b.node),
            )?;
        }
        Ok(out)
    }

    fn check_input(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.graph.total_dim() {
            return Err(Error::Dimension {
                what: "joint content vector",
                expected: self.graph.total_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }
}

impl JointScore for ComposedScore {
    fn dim(&self) -> usize {
        self.graph.total_dim()
    }

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        self.score_with(&SerialExecutor, u, t)
    }

    fn score_vjp(&self, u: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.score_vjp_with(&SerialExecutor, u, t, cotangent)
    }
}

/// A composed score paired with an executor, so samplers can run node
/// evaluations on a worker pool through the plain [`JointScore`] interface.
pub struct ParallelScore<'a, E: Executor> {
    pub composed: &'a ComposedScore,
    pub exec: &'a E,
}

impl<E: Executor> JointScore for ParallelScore<'_, E> {
    fn dim(&self) -> usize {
        self.composed.dim()
    }

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        self.composed.score_with(self.exec, u, t)
    }

    fn score_vjp(&self, u: &[f64], t: f64, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.composed.score_vjp_with(self.exec, u, t, cotangent)
    }
}

fn attach_node(e: Error, node: NodeRef) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!("{node}: {msg}")),
        other => other,
    }
}

/// The composed Gaussian: an affine score `s(u) = shift − precision·u`.
#[derive(Debug, Clone)]
pub struct ComposedGaussian {
    pub precision: Matrix,
    pub shift: Vec<f64>,
}

impl ComposedGaussian {
    pub fn score(&self, u: &[f64]) -> Result<Vec<f64>> {
        let ju = self.precision.matvec(u)?;
        Ok(self.shift.iter().zip(&ju).map(|(h, j)| h - j).collect())
    }

    /// Whether the assembled precision is positive definite. Loopy graphs
    /// can produce an improper composition; that is data, not a failure.
    pub fn is_proper(&self) -> bool {
        self.precision.cholesky().is_ok()
    }

    /// Mean of the proper composed Gaussian.
    pub fn mean(&self) -> Result<Vec<f64>> {
        self.precision.cholesky()?.solve(&self.shift)
    }

    /// Covariance of the proper composed Gaussian.
    pub fn covariance(&self) -> Result<Matrix> {
        self.precision.spd_inverse()
    }
}

/// Assembles the composed score of Gaussian node marginals at noise level
/// `sigma` by brute-force matrix lifting: each node contributes its noised
/// precision `(Σ_node + σ²I)⁻¹` and shift `J_node·μ_node`, embedded into
/// joint coordinates and weighted by the node coefficient.
///
/// This is the dense reference route for the gather/evaluate/scatter path of
/// [`ComposedScore`]; the two must agree to numerical precision.
pub fn composed_gaussian_oracle(
    graph: &FactorGraph,
    marginals: &[GaussianMarginal],
    sigma: f64,
) -> Result<ComposedGaussian> {
    let n = graph.total_dim();
    let coeffs = graph.bethe_coefficients();
    let mut precision = Matrix::zeros(n, n);
    let mut shift = vec![0.0; n];
    for node in graph.nodes() {
        let weight = coeffs.coefficient(node);
        if weight == 0.0 {
            continue;
        }
        let marginal = marginals
            .iter()
            .find(|m| m.node == node)
            .ok_or_else(|| Error::invalid(format!("missing marginal for {node}")))?;
        let coords = graph.node_coords(node);
        if marginal.mean.len() != coords.len() {
            return Err(Error::Dimension {
                what: "marginal dimension",
                expected: coords.len(),
                got: marginal.mean.len(),
            });
        }
        let noised = marginal.covariance.add_diagonal(sigma * sigma);
        let j = noised.spd_inverse()?;
        let h = j.matvec(&marginal.mean)?;
        for (r, &cr) in coords.iter().enumerate() {
            shift[cr] += weight * h[r];
            for (c, &cc) in coords.iter().enumerate() {
                precision.add_to(cr, cc, weight * j.get(r, c));
            }
        }
    }
    Ok(ComposedGaussian { precision, shift })
}
