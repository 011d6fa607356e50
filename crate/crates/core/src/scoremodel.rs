//! Score models for node marginals.
//!
//! Three implementations of the [`ScoreModel`] interface:
//!
//! * [`GaussianScoreModel`] — exact score of a noised Gaussian, the test
//!   oracle for everything downstream;
//! * [`GmmScoreModel`] — exact score of a noised Gaussian mixture, computed
//!   with log-space responsibilities;
//! * [`MlpScoreModel`] — a small tanh network trained by denoising score
//!   matching. The network predicts the injected noise `ε̂` and the score is
//!   `−ε̂/σ`, which keeps regression targets bounded at every noise level.
//!
//! Training draws `σ` log-uniformly over the schedule range and weights the
//! objective by `σ²`, so the per-sample loss is the plain `‖ε − ε̂‖²` MSE.
//! All draws are counter-keyed (see [`crate::rng`]): training is a pure
//! function of `(dataset, architecture, config)` and node models can be
//! trained in parallel with bit-identical results.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::{FactorGraph, NodeKind, NodeRef};
use crate::linalg::Matrix;
use crate::rng::{self, tag};
use crate::schedule::NoiseSchedule;

/// A score function for one node marginal: maps a node-local content vector
/// and a diffusion time to the score of the noised marginal.
///
/// Implementations must be deterministic and output the input's dimension.
pub trait ScoreModel: Send + Sync {
    fn score(&self, u: &[f64], t: f64, condition: Option<&[f64]>) -> Result<Vec<f64>>;

    /// Vector–Jacobian product `(∂score/∂u)ᵀ · cotangent`, used by
    /// reconstruction guidance. Models without this capability report
    /// [`Error::Unsupported`].
    fn score_vjp(
        &self,
        u: &[f64],
        t: f64,
        condition: Option<&[f64]>,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        let _ = (u, t, condition, cotangent);
        Err(Error::Unsupported("score_vjp"))
    }
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Analytic Gaussian
// ---------------------------------------------------------------------------

/// Exact score of a Gaussian data distribution `N(μ, Σ)` under the forward
/// noising process: at noise level `σ` the marginal is `N(μ, Σ + σ²I)` and
/// the score is `−(Σ + σ²I)⁻¹(u − μ)`, solved by Cholesky factorization.
///
/// Conditions are ignored; the analytic family is unconditional.
#[derive(Debug, Clone)]
pub struct GaussianScoreModel {
    mean: Vec<f64>,
    covariance: Matrix,
    schedule: NoiseSchedule,
}

impl GaussianScoreModel {
    pub fn new(mean: Vec<f64>, covariance: Matrix, schedule: NoiseSchedule) -> Result<Self> {
        check_dim("gaussian mean vs covariance", mean.len(), covariance.rows())?;
        if covariance.asymmetry() > 1e-12 {
            return Err(Error::invalid("gaussian covariance must be symmetric"));
        }
        // Must be positive definite on its own (σ = 0 is a valid query).
        covariance.cholesky()?;
        Ok(GaussianScoreModel {
            mean,
            covariance,
            schedule,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    /// Score at an explicit noise level (bypasses the schedule).
    pub fn score_at_sigma(&self, u: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim("gaussian score input", self.dim(), u.len())?;
        let noised = self.covariance.add_diagonal(sigma * sigma);
        let chol = noised.cholesky()?;
        let diff = crate::linalg::vec_sub(u, &self.mean);
        Ok(chol.solve(&diff)?.iter().map(|v| -v).collect())
    }

    /// Precision of the noised marginal, `(Σ + σ²I)⁻¹`.
    pub fn noised_precision(&self, sigma: f64) -> Result<Matrix> {
        self.covariance.add_diagonal(sigma * sigma).spd_inverse()
    }

    /// Log-density of the noised marginal at `u`.
    pub fn noised_log_density(&self, u: &[f64], sigma: f64) -> Result<f64> {
        check_dim("gaussian density input", self.dim(), u.len())?;
        let noised = self.covariance.add_diagonal(sigma * sigma);
        let chol = noised.cholesky()?;
        let diff = crate::linalg::vec_sub(u, &self.mean);
        let quad = crate::linalg::dot(&diff, &chol.solve(&diff)?);
        let k = self.dim() as f64;
        Ok(-0.5 * (k * libm::log(2.0 * core::f64::consts::PI) + chol.log_det() + quad))
    }
}

impl ScoreModel for GaussianScoreModel {
    fn score(&self, u: &[f64], t: f64, _condition: Option<&[f64]>) -> Result<Vec<f64>> {
        self.score_at_sigma(u, self.schedule.sigma(t)?)
    }

    fn score_vjp(
        &self,
        u: &[f64],
        t: f64,
        _condition: Option<&[f64]>,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        check_dim("gaussian vjp input", self.dim(), u.len())?;
        check_dim("gaussian vjp cotangent", self.dim(), cotangent.len())?;
        // The Jacobian is the constant symmetric matrix −(Σ + σ²I)⁻¹.
        let sigma = self.schedule.sigma(t)?;
        let chol = self.covariance.add_diagonal(sigma * sigma).cholesky()?;
        Ok(chol.solve(cotangent)?.iter().map(|v| -v).collect())
    }
}

// ---------------------------------------------------------------------------
// Analytic Gaussian mixture
// ---------------------------------------------------------------------------

/// Exact score of a noised Gaussian mixture. Component covariances pick up
/// the same `σ²I`, and the score is the responsibility-weighted sum of the
/// component scores with responsibilities formed by log-sum-exp.
#[derive(Debug, Clone)]
pub struct GmmScoreModel {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Matrix>,
    schedule: NoiseSchedule,
}

impl GmmScoreModel {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Matrix>,
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != covariances.len()
        {
            return Err(Error::invalid(
                "mixture needs matching non-empty weights, means, covariances",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 || weights.iter().any(|&w| w <= 0.0) {
            return Err(Error::invalid(
                "mixture weights must be positive and sum to 1",
            ));
        }
        let dim = means[0].len();
        for (m, c) in means.iter().zip(&covariances) {
            if m.len() != dim || c.rows() != dim || c.cols() != dim {
                return Err(Error::invalid("mixture components must share one dimension"));
            }
        }
        Ok(GmmScoreModel {
            weights,
            means,
            covariances,
            schedule,
        })
    }

    /// Convenience constructor for 1D mixtures from (weight, mean, variance).
    pub fn one_dimensional(
        components: &[(f64, f64, f64)],
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        let weights = components.iter().map(|c| c.0).collect();
        let means = components.iter().map(|c| vec![c.1]).collect();
        let covs = components
            .iter()
            .map(|c| Matrix::from_rows(1, 1, &[c.2]))
            .collect::<Result<Vec<_>>>()?;
        GmmScoreModel::new(weights, means, covs, schedule)
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    /// Per-component log joint weights `ln w_c + ln N(u; μ_c, Σ_c + σ²I)`.
    fn component_logs(&self, u: &[f64], sigma: f64) -> Result<Vec<(f64, Vec<f64>)>> {
        let k = self.dim() as f64;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.covariances))
            .map(|(&w, (mean, cov))| {
                let chol = cov.add_diagonal(sigma * sigma).cholesky()?;
                let diff = crate::linalg::vec_sub(u, mean);
                let solved = chol.solve(&diff)?;
                let quad = crate::linalg::dot(&diff, &solved);
                let log_n = -0.5
                    * (k * libm::log(2.0 * core::f64::consts::PI) + chol.log_det() + quad);
                // Component score: −(Σ_c + σ²I)⁻¹ (u − μ_c).
                let comp_score = solved.iter().map(|v| -v).collect();
                Ok((libm::log(w) + log_n, comp_score))
            })
            .collect()
    }

    /// Score at an explicit noise level.
    pub fn score_at_sigma(&self, u: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim("gmm score input", self.dim(), u.len())?;
        let logs = self.component_logs(u, sigma)?;
        let max_log = logs.iter().fold(f64::NEG_INFINITY, |m, (l, _)| m.max(*l));
        let mut total = 0.0;
        let mut out = vec![0.0; self.dim()];
        for (l, comp_score) in &logs {
            let r = libm::exp(l - max_log);
            total += r;
            for (o, s) in out.iter_mut().zip(comp_score) {
                *o += r * s;
            }
        }
        for o in &mut out {
            *o /= total;
        }
        Ok(out)
    }

    /// Log-density of the noised mixture at `u`.
    pub fn noised_log_density(&self, u: &[f64], sigma: f64) -> Result<f64> {
        check_dim("gmm density input", self.dim(), u.len())?;
        let logs = self.component_logs(u, sigma)?;
        let max_log = logs.iter().fold(f64::NEG_INFINITY, |m, (l, _)| m.max(*l));
        let sum: f64 = logs.iter().map(|(l, _)| libm::exp(l - max_log)).sum();
        Ok(max_log + libm::log(sum))
    }
}

impl ScoreModel for GmmScoreModel {
    fn score(&self, u: &[f64], t: f64, _condition: Option<&[f64]>) -> Result<Vec<f64>> {
        self.score_at_sigma(u, self.schedule.sigma(t)?)
    }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// One fully connected tanh network head serving a fixed content width.
/// `widths` runs from the input feature width to the output width; parameters
/// are stored flat per layer as row-major weights followed by biases.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadSpec {
    widths: Vec<usize>,
}

impl HeadSpec {
    fn new(data_dim: usize, cond_dim: usize, hidden: &[usize]) -> Result<Self> {
        if data_dim == 0 {
            return Err(Error::invalid("network data width must be >= 1"));
        }
        if hidden.iter().any(|&w| w == 0) {
            return Err(Error::invalid("hidden layer widths must be >= 1"));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(data_dim + 1 + cond_dim); // content, log σ, condition
        widths.extend_from_slice(hidden);
        widths.push(data_dim);
        Ok(HeadSpec { widths })
    }

    /// Output (= content) width served by this head.
    pub fn data_dim(&self) -> usize {
        *self.widths.last().expect("head has layers")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }
}

/// Trainable score network with ε-prediction output: `score = −ε̂/σ`.
///
/// A model usually carries one head; shift-invariant training produces two
/// (full piece width and half width) sharing one parameter buffer, and
/// evaluation dispatches on the input length.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreModel {
    schedule: NoiseSchedule,
    cond_dim: usize,
    heads: Vec<HeadSpec>,
    params: Vec<f64>,
}

impl MlpScoreModel {
    /// Fresh single-head model with Xavier-uniform weights and zero biases,
    /// deterministic in `seed`.
    pub fn init(
        data_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        let heads = vec![HeadSpec::new(data_dim, cond_dim, hidden)?];
        Ok(Self::init_from_heads(heads, cond_dim, schedule, seed))
    }

    /// Fresh two-head model for shift-invariant use: one head at the piece
    /// width, one at half of it.
    pub fn init_shared(
        factor_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Result<Self> {
        if factor_dim % 2 != 0 {
            return Err(Error::invalid(
                "shift-invariant model needs an even piece width",
            ));
        }
        let heads = vec![
            HeadSpec::new(factor_dim, cond_dim, hidden)?,
            HeadSpec::new(factor_dim / 2, cond_dim, hidden)?,
        ];
        Ok(Self::init_from_heads(heads, cond_dim, schedule, seed))
    }

    fn init_from_heads(
        heads: Vec<HeadSpec>,
        cond_dim: usize,
        schedule: NoiseSchedule,
        seed: u64,
    ) -> Self {
        let total: usize = heads.iter().map(|h| h.param_count()).sum();
        let mut params = vec![0.0; total];
        let mut offset = 0;
        for (h, head) in heads.iter().enumerate() {
            let mut p = offset;
            for w in head.widths.windows(2) {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                for k in 0..fan_out * fan_in {
                    let key = rng::mix(&[seed, tag::PARAM_INIT, h as u64, (p + k) as u64]);
                    params[p + k] = scale * (2.0 * rng::unit(key) - 1.0);
                }
                p += fan_out * fan_in + fan_out; // biases stay zero
            }
            offset += head.param_count();
        }
        MlpScoreModel {
            schedule,
            cond_dim,
            heads,
            params,
        }
    }

    /// Model with every parameter zero: predicts `ε̂ = 0` everywhere.
    pub fn zeroed(
        data_dim: usize,
        cond_dim: usize,
        hidden: &[usize],
        schedule: NoiseSchedule,
    ) -> Result<Self> {
        let heads = vec![HeadSpec::new(data_dim, cond_dim, hidden)?];
        let total = heads[0].param_count();
        Ok(MlpScoreModel {
            schedule,
            cond_dim,
            heads,
            params: vec![0.0; total],
        })
    }

    pub fn schedule(&self) -> NoiseSchedule {
        self.schedule
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn heads(&self) -> &[HeadSpec] {
        &self.heads
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn head_for_width(&self, width: usize) -> Result<(usize, usize)> {
        let mut offset = 0;
        for (i, head) in self.heads.iter().enumerate() {
            if head.data_dim() == width {
                return Ok((i, offset));
            }
            offset += head.param_count();
        }
        Err(Error::invalid(format!(
            "no network head serves content width {width}"
        )))
    }

    fn build_input(&self, u: &[f64], sigma: f64, condition: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = Vec::with_capacity(u.len() + 1 + self.cond_dim);
        x.extend_from_slice(u);
        x.push(libm::log(sigma));
        match condition {
            Some(c) => {
                check_dim("condition vector", self.cond_dim, c.len())?;
                x.extend_from_slice(c);
            }
            // The null condition is the all-zeros vector.
            None => x.extend(core::iter::repeat(0.0).take(self.cond_dim)),
        }
        Ok(x)
    }

    /// Forward pass through one head, recording activations for backprop.
    /// `trace[0]` is the input, `trace[L]` the output.
    fn forward_trace(&self, head: usize, offset: usize, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let spec = &self.heads[head];
        let mut trace = Vec::with_capacity(spec.widths.len());
        trace.push(x.to_vec());
        let mut p = offset;
        let layers = spec.widths.len() - 1;
        for (l, w) in spec.widths.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[p..p + n_out * n_in];
            let biases = &self.params[p + n_out * n_in..p + n_out * (n_in + 1)];
            p += n_out * (n_in + 1);
            let prev = trace.last().expect("trace is seeded with the input");
            let mut z = vec![0.0; n_out];
            for r in 0..n_out {
                let row = &weights[r * n_in..(r + 1) * n_in];
                let mut acc = biases[r];
                for (a, b) in row.iter().zip(prev) {
                    acc += a * b;
                }
                z[r] = if l + 1 < layers { libm::tanh(acc) } else { acc };
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite activation in layer {l} of head {head}"
                )));
            }
            trace.push(z);
        }
        Ok(trace)
    }

    /// Predicted noise `ε̂` for a node-local content vector.
    pub fn predict_noise(
        &self,
        u: &[f64],
        sigma: f64,
        condition: Option<&[f64]>,
    ) -> Result<Vec<f64>> {
        let (head, offset) = self.head_for_width(u.len())?;
        let x = self.build_input(u, sigma, condition)?;
        Ok(self
            .forward_trace(head, offset, &x)?
            .pop()
            .expect("trace contains the output"))
    }

    /// Backward pass: accumulates parameter gradients into `grad` (same
    /// layout as `params`) and returns the gradient w.r.t. the input.
    fn backward(
        &self,
        head: usize,
        offset: usize,
        trace: &[Vec<f64>],
        out_grad: &[f64],
        grad: &mut [f64],
    ) -> Vec<f64> {
        let spec = &self.heads[head];
        let layers = spec.widths.len() - 1;
        // Parameter offsets per layer within this head.
        let mut layer_offsets = Vec::with_capacity(layers);
        let mut p = offset;
        for w in spec.widths.windows(2) {
            layer_offsets.push(p);
            p += w[1] * (w[0] + 1);
        }
        let mut g = out_grad.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (spec.widths[l], spec.widths[l + 1]);
            let act = &trace[l + 1];
            // δ = dL/dz for this layer; tanh'(z) = 1 − tanh²(z).
            let delta: Vec<f64> = if l + 1 < layers {
                g.iter().zip(act).map(|(gi, a)| gi * (1.0 - a * a)).collect()
            } else {
                g.clone()
            };
            let base = layer_offsets[l];
            let prev = &trace[l];
            for r in 0..n_out {
                let d = delta[r];
                let row = base + r * n_in;
                for c in 0..n_in {
                    grad[row + c] += d * prev[c];
                }
                grad[base + n_out * n_in + r] += d;
            }
            // Propagate to the previous activation.
            let mut g_prev = vec![0.0; n_in];
            for r in 0..n_out {
                let d = delta[r];
                let row = &self.params[base + r * n_in..base + (r + 1) * n_in];
                for (gp, w) in g_prev.iter_mut().zip(row) {
                    *gp += d * w;
                }
            }
            g = g_prev;
        }
        g
    }
}

impl ScoreModel for MlpScoreModel {
    fn score(&self, u: &[f64], t: f64, condition: Option<&[f64]>) -> Result<Vec<f64>> {
        let sigma = self.schedule.sigma(t)?;
        let eps_hat = self.predict_noise(u, sigma, condition)?;
        Ok(eps_hat.iter().map(|e| -e / sigma).collect())
    }

    fn score_vjp(
        &self,
        u: &[f64],
        t: f64,
        condition: Option<&[f64]>,
        cotangent: &[f64],
    ) -> Result<Vec<f64>> {
        check_dim("mlp vjp cotangent", u.len(), cotangent.len())?;
        let sigma = self.schedule.sigma(t)?;
        let (head, offset) = self.head_for_width(u.len())?;
        let x = self.build_input(u, sigma, condition)?;
        let trace = self.forward_trace(head, offset, &x)?;
        // score = −ε̂/σ, so the cotangent on ε̂ is −v/σ.
        let out_grad: Vec<f64> = cotangent.iter().map(|v| -v / sigma).collect();
        let mut scratch = vec![0.0; self.params.len()];
        let input_grad = self.backward(head, offset, &trace, &out_grad, &mut scratch);
        // Only the content slots of the input vector belong to u.
        Ok(input_grad[..u.len()].to_vec())
    }
}

// ---------------------------------------------------------------------------
// Denoising score matching
// ---------------------------------------------------------------------------

/// Training hyperparameters. `σ` is drawn log-uniformly over the schedule
/// range and the objective weight is `σ²`, fixed by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsmConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl DsmConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "training needs iterations >= 1 and batch_size >= 1",
            ));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive and finite"));
        }
        Ok(())
    }
}

/// Classic SGD momentum coefficient used by all trainers here.
pub const MOMENTUM: f64 = 0.9;

/// Clean marginal samples for one node, all of one dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match samples.first() {
            Some(s) if !s.is_empty() => s.len(),
            _ => return Err(Error::invalid("dataset must contain non-empty samples")),
        };
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("dataset samples must share one dimension"));
        }
        Ok(Dataset { samples })
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty datasets
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i]
    }
}

/// Draws `(σ, t)` for one training element: log-uniform in `σ`.
fn draw_sigma(schedule: &NoiseSchedule, seed: u64, round: u64, slot: u64) -> (f64, f64) {
    let v = rng::unit(rng::mix(&[seed, tag::TIME_DRAW, round, slot]));
    let (lo, hi) = (schedule.sigma_min(), schedule.sigma_max());
    let sigma = lo * libm::pow(hi / lo, v);
    let t = schedule
        .time_of_sigma(sigma)
        .expect("sigma drawn inside the schedule range");
    (sigma, t)
}

/// One denoising-score-matching step on a batch of clean vectors: draws
/// `(σ, ε)` per element with keys derived from `(seed, round)`, forms
/// `u_t = u_0 + σ·ε`, and returns the mean `‖ε − ε̂‖²` loss together with its
/// full parameter gradient. The batch width selects the network head;
/// gradients for other heads stay zero.
pub fn dsm_loss(
    model: &MlpScoreModel,
    batch: &[&[f64]],
    seed: u64,
    round: u64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::invalid("dsm_loss needs a non-empty batch"));
    }
    let width = batch[0].len();
    let (head, offset) = model.head_for_width(width)?;
    let schedule = model.schedule;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch.len() as f64;
    for (slot, u0) in batch.iter().enumerate() {
        check_dim("dsm batch element", width, u0.len())?;
        let (sigma, _t) = draw_sigma(&schedule, seed, round, slot as u64);
        let mut u_t = Vec::with_capacity(width);
        let mut eps = Vec::with_capacity(width);
        for (k, &v) in u0.iter().enumerate() {
            let e = rng::standard_normal(rng::mix(&[
                seed,
                tag::NOISE_EPS,
                round,
                slot as u64,
                k as u64,
            ]));
            eps.push(e);
            u_t.push(v + sigma * e);
        }
        let x = model.build_input(&u_t, sigma, None)?;
        let trace = model.forward_trace(head, offset, &x)?;
        let eps_hat = trace.last().expect("trace contains the output");
        let residual: Vec<f64> = eps_hat.iter().zip(&eps).map(|(p, e)| p - e).collect();
        loss += crate::linalg::dot(&residual, &residual) * inv_b;
        let out_grad: Vec<f64> = residual.iter().map(|r| 2.0 * r * inv_b).collect();
        model.backward(head, offset, &trace, &out_grad, &mut grad);
    }
    Ok((loss, grad))
}

/// A trained model plus its loss curve.
#[derive(Debug, Clone)]
pub struct NodeTraining {
    pub model: MlpScoreModel,
    pub losses: Vec<f64>,
}

fn sgd_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = MOMENTUM * *v + g;
        *p -= lr * *v;
    }
}

fn draw_batch<'d>(dataset: &'d Dataset, size: usize, seed: u64, round: u64) -> Vec<&'d [f64]> {
    (0..size)
        .map(|slot| {
            let key = rng::mix(&[seed, tag::BATCH, round, slot as u64]);
            dataset.sample(rng::index(key, dataset.len()))
        })
        .collect()
}

/// Trains one node model by SGD with momentum on the DSM objective.
/// Deterministic in `config.seed`.
pub fn train_node(
    dataset: &Dataset,
    hidden: &[usize],
    schedule: NoiseSchedule,
    config: &DsmConfig,
) -> Result<NodeTraining> {
    config.validate()?;
    let mut model = MlpScoreModel::init(dataset.dim(), 0, hidden, schedule, config.seed)?;
    let mut velocity = vec![0.0; model.param_count()];
    let mut losses = Vec::with_capacity(config.iterations);
    for iter in 0..config.iterations {
        let batch = draw_batch(dataset, config.batch_size, config.seed, iter as u64);
        let (loss, grad) = dsm_loss(&model, &batch, config.seed, iter as u64)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iter });
        }
        sgd_step(&mut model.params, &mut velocity, &grad, config.learning_rate);
        losses.push(loss);
    }
    Ok(NodeTraining { model, losses })
}

/// Trains an independent model per graph node that participates in the
/// composition (all factors, variables of degree >= 2). Node seeds are
/// derived as `mix(seed, kind, index)`, so parallel and serial execution
/// produce bit-identical models.
pub fn train_collage<E: Executor>(
    exec: &E,
    graph: &FactorGraph,
    datasets: &BTreeMap<NodeRef, Dataset>,
    hidden: &[usize],
    schedule: NoiseSchedule,
    config: &DsmConfig,
) -> Result<BTreeMap<NodeRef, NodeTraining>> {
    config.validate()?;
    let coeffs = graph.bethe_coefficients();
    let mut nodes = Vec::new();
    for node in graph.nodes() {
        if coeffs.coefficient(node) == 0.0 {
            continue;
        }
        let dataset = datasets
            .get(&node)
            .ok_or_else(|| Error::invalid(format!("missing dataset for {node}")))?;
        let want = graph.node_coords(node).len();
        if dataset.dim() != want {
            return Err(Error::invalid(format!(
                "dataset for {node} has dimension {} but the node covers {want} coordinates",
                dataset.dim()
            )));
        }
        nodes.push((node, dataset));
    }
    let trained = exec.map(nodes.len(), &|i| {
        let (node, dataset) = nodes[i];
        let kind_tag = match node.kind {
            NodeKind::Factor => 0u64,
            NodeKind::Variable => 1u64,
        };
        let node_config = DsmConfig {
            seed: rng::mix(&[config.seed, tag::NODE, kind_tag, node.index as u64]),
            ..*config
        };
        train_node(dataset, hidden, schedule, &node_config).map(|t| (node, t))
    });
    trained.into_iter().collect()
}

/// Shift-invariant training outcome: one model serving both widths.
#[derive(Debug, Clone)]
pub struct SharedTraining {
    pub model: MlpScoreModel,
    pub losses: Vec<f64>,
    /// Number of iterations that trained the half-width head.
    pub crop_steps: usize,
}

/// Trains one shared model on factor-width data: each iteration uses, with
/// probability `crop_probability`, a random contiguous half-width crop of the
/// clean samples (training the half-width head), otherwise the full width.
/// With `crop_probability = 0` this reduces exactly to [`train_node`] on the
/// factor marginal.
pub fn train_shift_invariant(
    dataset: &Dataset,
    hidden: &[usize],
    schedule: NoiseSchedule,
    config: &DsmConfig,
    crop_probability: f64,
) -> Result<SharedTraining> {
    config.validate()?;
    let full = dataset.dim();
    if full % 2 != 0 {
        return Err(Error::invalid(
            "shift-invariant training needs an even piece width",
        ));
    }
    if !(0.0..=1.0).contains(&crop_probability) {
        return Err(Error::invalid("crop probability must lie in [0, 1]"));
    }
    let half = full / 2;
    let mut model = MlpScoreModel::init_shared(full, 0, hidden, schedule, config.seed)?;
    let mut velocity = vec![0.0; model.param_count()];
    let mut losses = Vec::with_capacity(config.iterations);
    let mut crop_steps = 0;
    for iter in 0..config.iterations {
        let round = iter as u64;
        let crop = rng::unit(rng::mix(&[config.seed, tag::CROP_COIN, round])) < crop_probability;
        let batch = draw_batch(dataset, config.batch_size, config.seed, round);
        let cropped: Vec<Vec<f64>>;
        let views: Vec<&[f64]> = if crop {
            crop_steps += 1;
            cropped = batch
                .iter()
                .enumerate()
                .map(|(slot, u0)| {
                    let key = rng::mix(&[config.seed, tag::CROP_OFFSET, round, slot as u64]);
                    let off = rng::index(key, half + 1);
                    u0[off..off + half].to_vec()
                })
                .collect();
            cropped.iter().map(|v| v.as_slice()).collect()
        } else {
            batch
        };
        let (loss, grad) = dsm_loss(&model, &views, config.seed, round)?;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { iteration: iter });
        }
        sgd_step(&mut model.params, &mut velocity, &grad, config.learning_rate);
        losses.push(loss);
    }
    Ok(SharedTraining {
        model,
        losses,
        crop_steps,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"DCSM";
const CHECKPOINT_VERSION: u32 = 1;

/// Serializes an MLP model to a little-endian binary blob. The round trip
/// through [`load_checkpoint`] is byte-exact.
pub fn save_checkpoint(model: &MlpScoreModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let (kind, lo, hi) = match model.schedule {
        NoiseSchedule::LinearVe {
            sigma_min,
            sigma_max,
        } => (0u32, sigma_min, sigma_max),
        NoiseSchedule::GeometricVe {
            sigma_min,
            sigma_max,
        } => (1u32, sigma_min, sigma_max),
    };
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&lo.to_le_bytes());
    out.extend_from_slice(&hi.to_le_bytes());
    out.extend_from_slice(&(model.cond_dim as u32).to_le_bytes());
    out.extend_from_slice(&(model.heads.len() as u32).to_le_bytes());
    for head in &model.heads {
        out.extend_from_slice(&(head.widths.len() as u32).to_le_bytes());
        for &w in &head.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
    }
    out.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for &p in &model.params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Deserializes a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint(blob: &[u8]) -> Result<MlpScoreModel> {
    let mut c = Cursor { data: blob, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let kind = c.u32("schedule kind")?;
    let lo = c.f64("sigma_min")?;
    let hi = c.f64("sigma_max")?;
    let schedule = match kind {
        0 => NoiseSchedule::linear_ve(lo, hi)?,
        1 => NoiseSchedule::geometric_ve(lo, hi)?,
        other => return Err(Error::Format(format!("unknown schedule kind {other}"))),
    };
    let cond_dim = c.u32("cond_dim")? as usize;
    let head_count = c.u32("head count")? as usize;
    if head_count == 0 || head_count > 16 {
        return Err(Error::Format(format!("implausible head count {head_count}")));
    }
    let mut heads = Vec::with_capacity(head_count);
    for h in 0..head_count {
        let n = c.u32("width count")? as usize;
        if n < 2 {
            return Err(Error::Format(format!("head {h} has fewer than 2 layers")));
        }
        let mut widths = Vec::with_capacity(n);
        for _ in 0..n {
            let w = c.u32("layer width")? as usize;
            if w == 0 {
                return Err(Error::Format(format!("head {h} has a zero layer width")));
            }
            widths.push(w);
        }
        heads.push(HeadSpec { widths });
    }
    let expected: usize = heads.iter().map(|h| h.param_count()).sum();
    let stored = c.u64("parameter count")? as usize;
    if stored != expected {
        return Err(Error::Format(format!(
            "parameter count {stored} does not match architecture ({expected})"
        )));
    }
    let mut params = Vec::with_capacity(stored);
    for _ in 0..stored {
        params.push(c.f64("parameter")?);
    }
    if c.pos != blob.len() {
        return Err(Error::Format(format!(
            "trailing {} bytes after checkpoint payload",
            blob.len() - c.pos
        )));
    }
    Ok(MlpScoreModel {
        schedule,
        cond_dim,
        heads,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear_ve(0.1, 10.0).unwrap()
    }

    #[test]
    fn gaussian_score_vanishes_at_mode() {
        let m = GaussianScoreModel::new(
            vec![1.0, -2.0],
            Matrix::from_rows(2, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap(),
            sched(),
        )
        .unwrap();
        let s = m.score(&[1.0, -2.0], 3.0, None).unwrap();
        assert!(s.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn gaussian_score_scalar_closed_form() {
        // μ=0, Σ=1, σ=1, u=2 → −2/(1+1) = −1.
        let m = GaussianScoreModel::new(vec![0.0], Matrix::identity(1), sched()).unwrap();
        let s = m.score(&[2.0], 1.0, None).unwrap();
        assert!((s[0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_matches_dense_solve() {
        let cov = Matrix::from_rows(2, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let m = GaussianScoreModel::new(vec![0.0, 0.0], cov.clone(), sched()).unwrap();
        let s = m.score_at_sigma(&[1.0, -1.0], 0.3).unwrap();
        let precision = cov.add_diagonal(0.09).spd_inverse().unwrap();
        let expect = precision.matvec(&[1.0, -1.0]).unwrap();
        for (a, b) in s.iter().zip(&expect) {
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn gmm_symmetric_midpoint_score_is_zero() {
        let m = GmmScoreModel::one_dimensional(
            &[(0.5, -1.0, 0.01), (0.5, 1.0, 0.01)],
            sched(),
        )
        .unwrap();
        for t in [0.1, 1.0, 7.5] {
            let s = m.score(&[0.0], t, None).unwrap();
            assert!(s[0].abs() < 1e-12, "t={t}: {}", s[0]);
        }
    }

    #[test]
    fn single_component_gmm_reduces_to_gaussian() {
        let cov = Matrix::from_rows(2, 2, &[1.5, 0.2, 0.2, 0.8]).unwrap();
        let gmm = GmmScoreModel::new(
            vec![1.0],
            vec![vec![0.3, -0.7]],
            vec![cov.clone()],
            sched(),
        )
        .unwrap();
        let gauss = GaussianScoreModel::new(vec![0.3, -0.7], cov, sched()).unwrap();
        let u = [0.9, 0.4];
        for t in [0.2, 1.7, 9.0] {
            let a = gmm.score(&u, t, None).unwrap();
            let b = gauss.score(&u, t, None).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn analytic_scores_match_log_density_gradients() {
        // Central finite differences of the noised log-density, 100 probes.
        let gauss = GaussianScoreModel::new(
            vec![0.5, -1.0],
            Matrix::from_rows(2, 2, &[2.0, 0.5, 0.5, 1.0]).unwrap(),
            sched(),
        )
        .unwrap();
        let gmm = GmmScoreModel::one_dimensional(
            &[(0.3, -2.0, 0.25), (0.7, 2.0, 0.25)],
            sched(),
        )
        .unwrap();
        let h = 1e-5;
        for probe in 0..100u64 {
            let sigma = 0.1 + 2.0 * rng::unit(rng::mix(&[5, probe]));
            // 2D Gaussian probe.
            let u = [
                3.0 * rng::standard_normal(rng::mix(&[6, probe])),
                3.0 * rng::standard_normal(rng::mix(&[7, probe])),
            ];
            let s = gauss.score_at_sigma(&u, sigma).unwrap();
            for k in 0..2 {
                let mut up = u;
                let mut dn = u;
                up[k] += h;
                dn[k] -= h;
                let fd = (gauss.noised_log_density(&up, sigma).unwrap()
                    - gauss.noised_log_density(&dn, sigma).unwrap())
                    / (2.0 * h);
                let denom = s[k].abs().max(1e-3);
                assert!((s[k] - fd).abs() / denom < 1e-6, "gauss probe {probe}");
            }
            // 1D mixture probe.
            let x = [4.0 * rng::standard_normal(rng::mix(&[8, probe]))];
            let s = gmm.score_at_sigma(&x, sigma).unwrap();
            let fd = (gmm.noised_log_density(&[x[0] + h], sigma).unwrap()
                - gmm.noised_log_density(&[x[0] - h], sigma).unwrap())
                / (2.0 * h);
            let denom = s[0].abs().max(1e-3);
            assert!((s[0] - fd).abs() / denom < 1e-6, "gmm probe {probe}");
        }
    }

    #[test]
    fn gmm_probe_value_against_density_gradient() {
        let m = GmmScoreModel::one_dimensional(
            &[(0.3, -2.0, 0.25), (0.7, 2.0, 0.25)],
            sched(),
        )
        .unwrap();
        let (u, sigma, h) = (1.0, 0.5, 1e-5);
        let s = m.score_at_sigma(&[u], sigma).unwrap()[0];
        let fd = (m.noised_log_density(&[u + h], sigma).unwrap()
            - m.noised_log_density(&[u - h], sigma).unwrap())
            / (2.0 * h);
        assert!((s - fd).abs() / s.abs() < 1e-6, "score {s} vs fd {fd}");
    }

    #[test]
    fn zeroed_mlp_scores_zero() {
        let m = MlpScoreModel::zeroed(3, 0, &[8], sched()).unwrap();
        let s = m.score(&[0.4, -1.0, 2.0], 2.5, None).unwrap();
        assert_eq!(s, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn tiny_mlp_matches_hand_forward_pass() {
        // widths [2, 2, 1]: input (u, ln σ), one tanh layer, linear output.
        let mut m = MlpScoreModel::zeroed(1, 0, &[2], sched()).unwrap();
        let p = m.params_mut();
        // W1 = [[0.3, -0.2], [0.5, 0.1]], b1 = [0.05, -0.4]
        p[0] = 0.3;
        p[1] = -0.2;
        p[2] = 0.5;
        p[3] = 0.1;
        p[4] = 0.05;
        p[5] = -0.4;
        // W2 = [[1.5, -0.7]], b2 = [0.2]
        p[6] = 1.5;
        p[7] = -0.7;
        p[8] = 0.2;
        let (u, t) = (0.8, 2.0);
        let ls = libm::log(t); // linear schedule: σ = t
        let h1 = libm::tanh(0.3 * u - 0.2 * ls + 0.05);
        let h2 = libm::tanh(0.5 * u + 0.1 * ls - 0.4);
        let eps_hat = 1.5 * h1 - 0.7 * h2 + 0.2;
        let expect = -eps_hat / t;
        let s = m.score(&[u], t, None).unwrap();
        assert!((s[0] - expect).abs() < 1e-12, "{} vs {expect}", s[0]);
    }

    #[test]
    fn dsm_gradient_matches_finite_differences() {
        // Every parameter of a small network, relative error < 1e-4.
        let dataset = Dataset::new(
            (0..16)
                .map(|i| vec![rng::standard_normal(rng::mix(&[31, i]))])
                .collect(),
        )
        .unwrap();
        let mut model = MlpScoreModel::init(1, 0, &[4], sched(), 7).unwrap();
        let batch: Vec<&[f64]> = (0..8).map(|i| dataset.sample(i)).collect();
        let (_, grad) = dsm_loss(&model, &batch, 99, 3).unwrap();
        let h = 1e-6;
        for i in 0..model.param_count() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let (lp, _) = dsm_loss(&model, &batch, 99, 3).unwrap();
            model.params_mut()[i] = orig - h;
            let (lm, _) = dsm_loss(&model, &batch, 99, 3).unwrap();
            model.params_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(1e-6);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-4,
                "param {i}: grad {} vs fd {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn zero_model_loss_near_dimension() {
        // ε̂ = 0 ⇒ loss = mean ‖ε‖² ≈ dim.
        let dim = 3;
        let model = MlpScoreModel::zeroed(dim, 0, &[4], sched()).unwrap();
        let data = vec![vec![0.0; dim]; 1];
        let views: Vec<&[f64]> = vec![data[0].as_slice()];
        let mut total = 0.0;
        let rounds = 10_000;
        for r in 0..rounds {
            let (loss, _) = dsm_loss(&model, &views, 4, r).unwrap();
            total += loss;
        }
        let mean = total / rounds as f64;
        assert!(
            (mean - dim as f64).abs() / (dim as f64) < 0.05,
            "mean loss {mean}"
        );
    }

    #[test]
    fn oracle_model_beats_zero_model() {
        // With Gaussian data the exact score predictor has a lower DSM loss
        // than the zero predictor on the same draws.
        let gauss =
            GaussianScoreModel::new(vec![0.0], Matrix::identity(1), sched()).unwrap();
        let mut oracle_total = 0.0;
        let mut zero_total = 0.0;
        let rounds = 4000u64;
        for r in 0..rounds {
            let u0 = rng::standard_normal(rng::mix(&[21, r]));
            let (sigma, _) = draw_sigma(&sched(), 17, r, 0);
            let e = rng::standard_normal(rng::mix(&[17, tag::NOISE_EPS, r, 0, 0]));
            let ut = u0 + sigma * e;
            // ω = σ²: loss element is ‖ε + σ·s(u_t)‖².
            let s = gauss.score_at_sigma(&[ut], sigma).unwrap()[0];
            oracle_total += (e + sigma * s) * (e + sigma * s);
            zero_total += e * e;
        }
        assert!(
            oracle_total < zero_total,
            "oracle {oracle_total} vs zero {zero_total}"
        );
    }

    #[test]
    fn training_is_deterministic() {
        let dataset = Dataset::new(
            (0..64)
                .map(|i| vec![rng::standard_normal(rng::mix(&[51, i]))])
                .collect(),
        )
        .unwrap();
        let config = DsmConfig {
            iterations: 100,
            batch_size: 8,
            learning_rate: 1e-3,
            seed: 12345,
        };
        let a = train_node(&dataset, &[8], sched(), &config).unwrap();
        let b = train_node(&dataset, &[8], sched(), &config).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn degenerate_data_trains_to_small_score_at_high_noise() {
        // All-zero 1D data: at large σ the score at u=0 must stay near 0.
        let dataset = Dataset::new(vec![vec![0.0]; 32]).unwrap();
        let config = DsmConfig {
            iterations: 800,
            batch_size: 16,
            learning_rate: 5e-3,
            seed: 3,
        };
        let schedule = NoiseSchedule::linear_ve(0.1, 5.0).unwrap();
        let trained = train_node(&dataset, &[16], schedule, &config).unwrap();
        let s = trained.model.score(&[0.0], 5.0, None).unwrap()[0];
        assert!(s.is_finite() && s.abs() < 0.1, "score at origin {s}");
    }

    #[test]
    fn collage_training_counts_and_missing_dataset() {
        let graph = crate::graph::build_chain(2, 2, 1).unwrap();
        let mk = |seed: u64, dim: usize| {
            Dataset::new(
                (0..32)
                    .map(|i| {
                        (0..dim)
                            .map(|k| rng::standard_normal(rng::mix(&[seed, i, k as u64])))
                            .collect()
                    })
                    .collect(),
            )
            .unwrap()
        };
        let mut datasets = BTreeMap::new();
        datasets.insert(NodeRef::factor(0), mk(1, 2));
        datasets.insert(NodeRef::factor(1), mk(2, 2));
        let config = DsmConfig {
            iterations: 20,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 5,
        };
        // Interior variable dataset missing: named error.
        let err = train_collage(
            &crate::exec::SerialExecutor,
            &graph,
            &datasets,
            &[4],
            sched(),
            &config,
        )
        .unwrap_err();
        assert!(format!("{err}").contains("variable 1"), "{err}");

        datasets.insert(NodeRef::variable(1), mk(3, 1));
        let trained = train_collage(
            &crate::exec::SerialExecutor,
            &graph,
            &datasets,
            &[4],
            sched(),
            &config,
        )
        .unwrap();
        // 2 factors + 1 interior variable; leaves need no model.
        assert_eq!(trained.len(), 3);
        assert!(!trained.contains_key(&NodeRef::variable(0)));
        assert!(!trained.contains_key(&NodeRef::variable(2)));
    }

    #[test]
    fn shift_invariant_crop_fraction_and_reduction() {
        let dataset = Dataset::new(
            (0..64)
                .map(|i| {
                    (0..4)
                        .map(|k| rng::standard_normal(rng::mix(&[61, i, k])))
                        .collect()
                })
                .collect(),
        )
        .unwrap();
        let config = DsmConfig {
            iterations: 10_000,
            batch_size: 1,
            learning_rate: 1e-4,
            seed: 8,
        };
        let shared = train_shift_invariant(&dataset, &[4], sched(), &config, 0.5).unwrap();
        let frac = shared.crop_steps as f64 / config.iterations as f64;
        assert!((0.48..=0.52).contains(&frac), "crop fraction {frac}");

        // crop_probability = 0 reduces bitwise to train_node on the full width.
        let short = DsmConfig {
            iterations: 200,
            ..config
        };
        let frozen = train_shift_invariant(&dataset, &[4], sched(), &short, 0.0).unwrap();
        let plain = train_node(&dataset, &[4], sched(), &short).unwrap();
        let full_head_params = plain.model.param_count();
        assert_eq!(
            &frozen.model.params()[..full_head_params],
            plain.model.params()
        );
        assert!(frozen.model.score(&[0.1, 0.2, 0.3, 0.4], 1.0, None).is_ok());
        assert!(frozen.model.score(&[0.1, 0.2], 1.0, None).is_ok());
        assert!(frozen.model.score(&[0.1, 0.2, 0.3], 1.0, None).is_err());
    }

    #[test]
    fn odd_width_rejected_for_shared_training() {
        let dataset = Dataset::new(vec![vec![0.0; 3]; 4]).unwrap();
        let config = DsmConfig {
            iterations: 1,
            batch_size: 1,
            learning_rate: 1e-3,
            seed: 1,
        };
        assert!(train_shift_invariant(&dataset, &[4], sched(), &config, 0.5).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_byte_exact() {
        let model = MlpScoreModel::init_shared(6, 2, &[5, 4], sched(), 77).unwrap();
        let blob = save_checkpoint(&model);
        let loaded = load_checkpoint(&blob).unwrap();
        assert_eq!(save_checkpoint(&loaded), blob);
        // Loaded model evaluates identically on random inputs.
        for i in 0..100u64 {
            let u: Vec<f64> = (0..6)
                .map(|k| rng::standard_normal(rng::mix(&[90, i, k])))
                .collect();
            let cond = vec![0.5, -0.5];
            let t = 0.2 + 9.0 * rng::unit(rng::mix(&[91, i]));
            let a = model.score(&u, t, Some(&cond)).unwrap();
            let b = loaded.score(&u, t, Some(&cond)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn checkpoint_truncation_is_a_format_error() {
        let model = MlpScoreModel::init(2, 0, &[3], sched(), 1).unwrap();
        let blob = save_checkpoint(&model);
        for cut in [0, 3, 10, blob.len() - 1] {
            assert!(
                matches!(load_checkpoint(&blob[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
        let mut bad_magic = blob.clone();
        bad_magic[0] = b'X';
        assert!(matches!(load_checkpoint(&bad_magic), Err(Error::Format(_))));
    }
}
