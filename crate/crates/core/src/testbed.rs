//! Exactly solvable Gaussian models on factor graphs.
//!
//! A joint Gaussian whose precision is a sum of per-factor SPD block lifts
//! factorizes over the graph, so its node marginals (submatrices of the
//! joint covariance) are mutually consistent and every downstream quantity —
//! joint scores, marginal scores, entropies — has a closed form. These
//! fixtures back the oracle tests and the sampling comparisons.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::collage::{ComposedScore, NodeBinding};
use crate::error::Result;
use crate::graph::{FactorGraph, GaussianMarginal};
use crate::linalg::Matrix;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scoremodel::{GaussianScoreModel, ScoreModel};

/// Random symmetric positive-definite matrix `AᵀA·scale² + ridge·I`.
pub fn random_spd(dim: usize, scale: f64, ridge: f64, seed: u64) -> Matrix {
    let mut a = Matrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            a.set(
                r,
                c,
                scale * rng::standard_normal(rng::mix(&[seed, r as u64, c as u64])),
            );
        }
    }
    a.transpose()
        .matmul(&a)
        .expect("square matmul")
        .add_diagonal(ridge)
}

/// A joint Gaussian that factorizes over a graph, with its exact marginals.
#[derive(Debug, Clone)]
pub struct GraphGaussian {
    pub graph: Arc<FactorGraph>,
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub precision: Matrix,
    pub marginals: Vec<GaussianMarginal>,
}

/// Builds a joint Gaussian Markov with respect to `graph`: the precision is
/// `0.5·I` plus a random SPD block (coupling strength `coupling`) lifted
/// from every factor's coordinate set. Marginals are exact submatrices of
/// the joint covariance, one per node.
pub fn markov_joint(graph: Arc<FactorGraph>, coupling: f64, seed: u64) -> Result<GraphGaussian> {
    let n = graph.total_dim();
    let mut precision = Matrix::zeros(n, n).add_diagonal(0.5);
    for j in 0..graph.num_factors() {
        let coords = graph.factor_coords(j);
        let block = random_spd(coords.len(), coupling, 0.0, rng::mix(&[seed, 1, j as u64]));
        for (r, &cr) in coords.iter().enumerate() {
            for (c, &cc) in coords.iter().enumerate() {
                precision.add_to(cr, cc, block.get(r, c));
            }
        }
    }
    let covariance = precision.spd_inverse()?;
    // Modest means: a variance-exploding prior is centered at zero, so a
    // data mean survives reverse integration only damped by ~σ_max; keeping
    // it small keeps moment tests meaningful at tight tolerances.
    let mean: Vec<f64> = (0..n)
        .map(|k| 0.5 * rng::standard_normal(rng::mix(&[seed, 2, k as u64])))
        .collect();
    let mut marginals = Vec::new();
    for node in graph.nodes() {
        let coords = graph.node_coords(node);
        let sub_mean: Vec<f64> = coords.iter().map(|&c| mean[c]).collect();
        let sub_cov = covariance.submatrix(coords)?.symmetrized();
        marginals.push(GaussianMarginal::new(node, sub_mean, sub_cov)?);
    }
    Ok(GraphGaussian {
        graph,
        mean,
        covariance,
        precision,
        marginals,
    })
}

impl GraphGaussian {
    /// Exact score of the noised joint, `−(Σ + σ²I)⁻¹(u − μ)`.
    pub fn joint_score(&self, u: &[f64], sigma: f64) -> Result<Vec<f64>> {
        let chol = self.covariance.add_diagonal(sigma * sigma).cholesky()?;
        let diff = crate::linalg::vec_sub(u, &self.mean);
        Ok(chol.solve(&diff)?.iter().map(|v| -v).collect())
    }

    /// Binds an exact Gaussian score model per participating node.
    pub fn composed(&self, schedule: NoiseSchedule) -> Result<ComposedScore> {
        let coeffs = self.graph.bethe_coefficients();
        let bindings = self
            .marginals
            .iter()
            .filter(|m| coeffs.coefficient(m.node) != 0.0)
            .map(|m| {
                let model = GaussianScoreModel::new(
                    m.mean.clone(),
                    m.covariance.clone(),
                    schedule,
                )?;
                Ok(NodeBinding::new(m.node, Arc::new(model) as Arc<dyn ScoreModel>))
            })
            .collect::<Result<Vec<_>>>()?;
        ComposedScore::new(self.graph.clone(), bindings)
    }
}
