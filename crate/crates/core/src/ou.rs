//! Discretized Ornstein–Uhlenbeck chain: the stationary 1D testbed.
//!
//! A stationary AR(1) sequence `x_{i+1} = φ·x_i + σ·sqrt(1−φ²)·ξ_i` has the
//! exactly computable Toeplitz covariance `C[i][j] = σ²·φ^{|i−j|}`, and every
//! contiguous window of a given width shares the same marginal. That makes it
//! the reference model for chain experiments: window score oracles, training
//! datasets, and seam/drift statistics all have closed forms.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::schedule::NoiseSchedule;
use crate::scoremodel::GaussianScoreModel;

/// Stationary OU chain parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuProcess {
    /// Lag-1 correlation, strictly inside (0, 1).
    pub phi: f64,
    /// Stationary marginal standard deviation.
    pub sigma: f64,
}

impl OuProcess {
    pub fn new(phi: f64, sigma: f64) -> Result<Self> {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::Domain {
                what: "OU lag-1 correlation phi",
                value: phi,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("OU sigma must be positive and finite"));
        }
        Ok(OuProcess { phi, sigma })
    }

    /// Parameterizes by correlation length: `phi = exp(-1/len)`.
    pub fn with_correlation_length(len: f64, sigma: f64) -> Result<Self> {
        if !(len > 0.0) {
            return Err(Error::invalid("correlation length must be positive"));
        }
        OuProcess::new(libm::exp(-1.0 / len), sigma)
    }

    /// Toeplitz covariance of a `dim`-wide window: `σ²·φ^|i−j|`.
    pub fn covariance(&self, dim: usize) -> Matrix {
        let mut c = Matrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                let lag = i.abs_diff(j) as i32;
                c.set(i, j, self.sigma * self.sigma * libm::pow(self.phi, lag as f64));
            }
        }
        c
    }

    /// Exact score model of a zero-mean `dim`-wide window marginal.
    pub fn window_model(&self, dim: usize, schedule: NoiseSchedule) -> Result<GaussianScoreModel> {
        GaussianScoreModel::new(alloc::vec![0.0; dim], self.covariance(dim), schedule)
    }

    /// Draws one stationary path of length `dim` by the AR(1) recursion.
    /// Deterministic in `key`.
    pub fn sample_path(&self, dim: usize, key: u64) -> Vec<f64> {
        let mut x = Vec::with_capacity(dim);
        let innovation = self.sigma * libm::sqrt(1.0 - self.phi * self.phi);
        for i in 0..dim {
            let z = rng::standard_normal(rng::mix(&[key, rng::tag::DATA, i as u64]));
            if i == 0 {
                x.push(self.sigma * z);
            } else {
                x.push(self.phi * x[i - 1] + innovation * z);
            }
        }
        x
    }
}
