//! Training-free conditional generation.
//!
//! Given an observation `y = H·u` through a linear operator, two ways to
//! steer a sampler without touching the model:
//!
//! * **replacement** — denoise to `û₀ = u + σ²·s(u)`, project onto the
//!   observation-consistent affine subspace `ũ₀ = H†y + (I − H†H)·û₀`, and
//!   hand the sampler the score `s̃ = (ũ₀ − u)/σ²` that points at the
//!   projected estimate;
//! * **reconstruction** — correct the score along the descent direction of
//!   the residual, `s̃ = s − λ_t·∇_u‖H·û₀ − y‖²`. The gradient either runs
//!   the full chain rule through the model (`ExactVjp`, needs a model VJP)
//!   or approximates `∂û₀/∂u ≈ I` (`IdentityJacobian`).
//!
//! The correction is applied *against* the residual gradient so each step
//! decreases `‖H·û₀ − y‖`; ascending it would push samples away from the
//! observation.
//!
//! Also here: the sequential outpainting baseline that grows long content
//! block by block (each block conditioned on its overlap with the previous
//! one), and spherical interpolation of condition vectors.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::collage::{JointScore, NodeScore};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::sampler::{sample, SampleResult, SamplerConfig};
use crate::schedule::NoiseSchedule;
use crate::scoremodel::ScoreModel;

/// Linear observation map with exact adjoint and pseudoinverse.
#[derive(Debug, Clone, PartialEq)]
pub enum LinearOperator {
    /// Keeps the listed coordinates (sorted, distinct). `H† = Hᵀ`.
    Mask { in_dim: usize, keep: Vec<usize> },
    /// Averages non-overlapping blocks of `block` consecutive coordinates.
    /// `H†` replicates each observed mean into its block.
    BoxDown { in_dim: usize, block: usize },
}

impl LinearOperator {
    pub fn mask(in_dim: usize, keep: Vec<usize>) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("mask must keep at least one coordinate"));
        }
        for w in keep.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::invalid("mask coordinates must be sorted and distinct"));
            }
        }
        if *keep.last().unwrap() >= in_dim {
            return Err(Error::invalid(format!(
                "mask coordinate {} out of range for dimension {in_dim}",
                keep.last().unwrap()
            )));
        }
        Ok(LinearOperator::Mask { in_dim, keep })
    }

    pub fn box_down(in_dim: usize, block: usize) -> Result<Self> {
        if block == 0 || in_dim == 0 || in_dim % block != 0 {
            return Err(Error::invalid(format!(
                "box downsample needs in_dim ({in_dim}) divisible by block ({block})"
            )));
        }
        Ok(LinearOperator::BoxDown { in_dim, block })
    }

    pub fn in_dim(&self) -> usize {
        match *self {
            LinearOperator::Mask { in_dim, .. } | LinearOperator::BoxDown { in_dim, .. } => in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LinearOperator::Mask { keep, .. } => keep.len(),
            LinearOperator::BoxDown { in_dim, block } => in_dim / block,
        }
    }

    /// `H·u`.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.expect_in(u.len())?;
        Ok(match self {
            LinearOperator::Mask { keep, .. } => keep.iter().map(|&c| u[c]).collect(),
            LinearOperator::BoxDown { block, .. } => u
                .chunks(*block)
                .map(|chunk| chunk.iter().sum::<f64>() / *block as f64)
                .collect(),
        })
    }

    /// `Hᵀ·y` (the exact adjoint: `⟨Hx, y⟩ = ⟨x, Hᵀy⟩`).
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.expect_out(y.len())?;
        let mut out = vec![0.0; self.in_dim()];
        match self {
            LinearOperator::Mask { keep, .. } => {
                for (&c, &v) in keep.iter().zip(y) {
                    out[c] = v;
                }
            }
            LinearOperator::BoxDown { block, .. } => {
                let scale = 1.0 / *block as f64;
                for (k, &v) in y.iter().enumerate() {
                    for slot in &mut out[k * block..(k + 1) * block] {
                        *slot = v * scale;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `H†·y` with `H·H† = I` on the observation space.
    pub fn apply_pinv(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.expect_out(y.len())?;
        Ok(match self {
            // Selection rows are orthonormal, so H† = Hᵀ.
            LinearOperator::Mask { .. } => self.apply_transpose(y)?,
            // H Hᵀ = I/b, hence H† = b·Hᵀ: replicate each mean into its block.
            LinearOperator::BoxDown { block, .. } => {
                let mut out = vec![0.0; self.in_dim()];
                for (k, &v) in y.iter().enumerate() {
                    for slot in &mut out[k * block..(k + 1) * block] {
                        *slot = v;
                    }
                }
                out
            }
        })
    }

    /// The affine projection `H†y + (I − H†H)·u`: replaces the observed
    /// content of `u` while leaving its null-space component untouched.
    pub fn project(&self, u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let hu = self.apply(u)?;
        let mut out = u.to_vec();
        let correction: Vec<f64> = y.iter().zip(&hu).map(|(yi, hi)| yi - hi).collect();
        let lifted = self.apply_pinv(&correction)?;
        for (o, l) in out.iter_mut().zip(&lifted) {
            *o += l;
        }
        Ok(out)
    }

    fn expect_in(&self, got: usize) -> Result<()> {
        if got != self.in_dim() {
            return Err(Error::Dimension {
                what: "operator input",
                expected: self.in_dim(),
                got,
            });
        }
        Ok(())
    }

    fn expect_out(&self, got: usize) -> Result<()> {
        if got != self.out_dim() {
            return Err(Error::Dimension {
                what: "operator observation",
                expected: self.out_dim(),
                got,
            });
        }
        Ok(())
    }
}

/// How the guidance strength `λ_t` evolves with the noise level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaSchedule {
    /// `λ_t = λ`.
    Constant,
    /// `λ_t = λ/σ_t²`, keeping the correction comparable to the score scale.
    SigmaScaled,
}

/// Gradient route for reconstruction guidance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Full chain rule through the score model (requires a VJP).
    ExactVjp,
    /// Approximates `∂û₀/∂u ≈ I`; cheap and model-free.
    IdentityJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuidanceMethod {
    Replacement,
    Reconstruction,
}

/// Conditioning settings; `lambda` only matters for reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub method: GuidanceMethod,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub gradient_mode: GradientMode,
}

impl GuidanceConfig {
    pub fn replacement() -> Self {
        GuidanceConfig {
            method: GuidanceMethod::Replacement,
            lambda: 1.0,
            lambda_schedule: LambdaSchedule::SigmaScaled,
            gradient_mode: GradientMode::ExactVjp,
        }
    }

    pub fn reconstruction(lambda: f64, schedule: LambdaSchedule, mode: GradientMode) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("reconstruction lambda must be positive"));
        }
        Ok(GuidanceConfig {
            method: GuidanceMethod::Reconstruction,
            lambda,
            lambda_schedule: schedule,
            gradient_mode: mode,
        })
    }

    fn lambda_at(&self, sigma: f64) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Constant => self.lambda,
            LambdaSchedule::SigmaScaled => self.lambda / (sigma * sigma),
        }
    }
}

/// Replacement-corrected score: denoise, project, re-encode.
pub fn replacement_step(
    score: &dyn JointScore,
    u: &[f64],
    t: f64,
    op: &LinearOperator,
    y: &[f64],
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let sigma = schedule.sigma(t)?;
    let s = score.score(u, t)?;
    let sig2 = sigma * sigma;
    let denoised: Vec<f64> = u.iter().zip(&s).map(|(ui, si)| ui + sig2 * si).collect();
    let projected = op.project(&denoised, y)?;
    Ok(projected
        .iter()
        .zip(u)
        .map(|(pi, ui)| (pi - ui) / sig2)
        .collect())
}

/// Reconstruction-corrected score: `s − λ_t·∇_u‖H·û₀ − y‖²`.
pub fn reconstruction_score(
    score: &dyn JointScore,
    u: &[f64],
    t: f64,
    op: &LinearOperator,
    y: &[f64],
    cfg: &GuidanceConfig,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let sigma = schedule.sigma(t)?;
    let s = score.score(u, t)?;
    let sig2 = sigma * sigma;
    let denoised: Vec<f64> = u.iter().zip(&s).map(|(ui, si)| ui + sig2 * si).collect();
    let residual: Vec<f64> = op
        .apply(&denoised)?
        .iter()
        .zip(y)
        .map(|(h, yi)| h - yi)
        .collect();
    // ∇_u ‖r‖² = 2·(∂û₀/∂u)ᵀ Hᵀ r with ∂û₀/∂u = I + σ²·∂s/∂u.
    let lifted = op.apply_transpose(&residual)?;
    let grad: Vec<f64> = match cfg.gradient_mode {
        GradientMode::IdentityJacobian => lifted.iter().map(|g| 2.0 * g).collect(),
        GradientMode::ExactVjp => {
            let through_model = score.score_vjp(u, t, &lifted)?;
            lifted
                .iter()
                .zip(&through_model)
                .map(|(g, m)| 2.0 * (g + sig2 * m))
                .collect()
        }
    };
    let lambda = cfg.lambda_at(sigma);
    Ok(s.iter().zip(&grad).map(|(si, gi)| si - lambda * gi).collect())
}

/// Wraps a joint score with observation guidance so any sampler can run
/// conditionally. With `final_denoise` enabled the terminal posterior-mean
/// jump uses the corrected score; for replacement that lands the output
/// exactly on the projected estimate, pinning observed mask coordinates.
pub struct Guided<'a> {
    pub inner: &'a dyn JointScore,
    pub op: &'a LinearOperator,
    pub y: &'a [f64],
    pub cfg: GuidanceConfig,
    pub schedule: NoiseSchedule,
}

impl JointScore for Guided<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score(&self, u: &[f64], t: f64) -> Result<Vec<f64>> {
        match self.cfg.method {
            GuidanceMethod::Replacement => {
                replacement_step(self.inner, u, t, self.op, self.y, &self.schedule)
            }
            GuidanceMethod::Reconstruction => reconstruction_score(
                self.inner,
                u,
                t,
                self.op,
                self.y,
                &self.cfg,
                &self.schedule,
            ),
        }
    }
}

/// Output of the sequential outpainting baseline.
#[derive(Debug, Clone)]
pub struct OutpaintResult {
    /// The assembled long content, `blocks·F − (blocks−1)·V` coordinates.
    pub value: Vec<f64>,
    /// Per-block samples in generation order (each of width `F`).
    pub blocks: Vec<Vec<f64>>,
    /// Total sequential score evaluations (`blocks · K` without the final
    /// denoise jump).
    pub score_calls: usize,
}

/// Grows long content autoregressively with one block-width model: block 0
/// is sampled unconditionally, every later block observes its leading
/// `overlap` coordinates (pinned to the trailing overlap of the previous
/// block) through a mask, guided by `guidance`. Sequential by construction —
/// this is the baseline whose latency scales with the number of blocks.
pub fn autoregressive_outpaint(
    model: &dyn ScoreModel,
    condition: Option<&[f64]>,
    block_dim: usize,
    num_blocks: usize,
    overlap: usize,
    guidance: &GuidanceConfig,
    schedule: &NoiseSchedule,
    sampler_config: &SamplerConfig,
) -> Result<OutpaintResult> {
    if num_blocks == 0 {
        return Err(Error::invalid("outpainting needs at least one block"));
    }
    if overlap == 0 || overlap >= block_dim {
        return Err(Error::invalid(format!(
            "outpaint overlap {overlap} must satisfy 1 <= overlap < block width {block_dim}"
        )));
    }
    let joint = NodeScore {
        model,
        dim: block_dim,
        condition,
    };
    let op = LinearOperator::mask(block_dim, (0..overlap).collect())?;
    let mut blocks: Vec<Vec<f64>> = Vec::with_capacity(num_blocks);
    let mut calls = 0usize;
    for b in 0..num_blocks {
        let block_config = SamplerConfig {
            grid: sampler_config.grid.clone(),
            seed: rng::mix(&[sampler_config.seed, tag::AR_BLOCK, b as u64]),
            ..*sampler_config
        };
        let result: SampleResult = if b == 0 {
            sample(&joint, schedule, &block_config)?
        } else {
            let prev = &blocks[b - 1];
            let y = prev[block_dim - overlap..].to_vec();
            let guided = Guided {
                inner: &joint,
                op: &op,
                y: &y,
                cfg: *guidance,
                schedule: *schedule,
            };
            sample(&guided, schedule, &block_config)?
        };
        calls += result.score_calls;
        blocks.push(result.value);
    }
    let stride = block_dim - overlap;
    let mut value = Vec::with_capacity(num_blocks * stride + overlap);
    value.extend_from_slice(&blocks[0]);
    for block in &blocks[1..] {
        value.extend_from_slice(&block[overlap..]);
    }
    Ok(OutpaintResult {
        value,
        blocks,
        score_calls: calls,
    })
}

/// Spherical interpolation between condition vectors: the direction follows
/// the great circle between `a/‖a‖` and `b/‖b‖`, the norm interpolates
/// linearly. Falls back to linear interpolation when the angle is below
/// 1e-7.
pub fn slerp(a: &[f64], b: &[f64], tau: f64) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "slerp endpoints",
            expected: a.len(),
            got: b.len(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain {
            what: "slerp parameter tau",
            value: tau,
            lo: 0.0,
            hi: 1.0,
        });
    }
    let na = crate::linalg::norm(a);
    let nb = crate::linalg::norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::invalid("slerp endpoints must be non-zero"));
    }
    let cos = (crate::linalg::dot(a, b) / (na * nb)).clamp(-1.0, 1.0);
    let theta = libm::acos(cos);
    let target_norm = (1.0 - tau) * na + tau * nb;
    if theta < 1e-7 {
        // Nearly parallel: plain linear interpolation.
        return Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (1.0 - tau) * x + tau * y)
            .collect());
    }
    let sin = libm::sin(theta);
    if sin < 1e-12 {
        return Err(Error::invalid(
            "slerp endpoints are antipodal; the interpolation path is ambiguous",
        ));
    }
    let wa = libm::sin((1.0 - tau) * theta) / sin / na;
    let wb = libm::sin(tau * theta) / sin / nb;
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| target_norm * (wa * x + wb * y))
        .collect())
}
