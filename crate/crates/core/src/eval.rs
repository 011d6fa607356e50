//! Quantitative evaluation at desk scale.
//!
//! The centerpiece is the crop-based Fréchet distance: take one random
//! fixed-size crop per long generated sample, fit a Gaussian to the raw crop
//! vectors, fit another to reference short-content samples, and report
//! `d² = ‖μa − μb‖² + Tr(Σa + Σb − 2·(Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
//! Raw coordinates stand in for learned features, so values are only
//! meaningful comparatively (orderings between methods on the same testbed).
//!
//! Seam and drift statistics quantify the two classic failure modes of long
//! content: visible block boundaries and moment drift across block position.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, tag};

/// Sample mean and unbiased covariance of a set of vectors.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
    pub count: usize,
}

/// Fits mean and unbiased (n−1) covariance; the covariance is symmetrized.
pub fn fit_gaussian(samples: &[Vec<f64>]) -> Result<GaussianFit> {
    if samples.len() < 2 {
        return Err(Error::invalid("gaussian fit needs at least 2 samples"));
    }
    let dim = samples[0].len();
    if samples.iter().any(|s| s.len() != dim) {
        return Err(Error::invalid("gaussian fit samples must share one dimension"));
    }
    let n = samples.len() as f64;
    let mut mean = alloc::vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = Matrix::zeros(dim, dim);
    for s in samples {
        let d: Vec<f64> = s.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for r in 0..dim {
            for c in r..dim {
                cov.add_to(r, c, d[r] * d[c] / (n - 1.0));
            }
        }
    }
    for r in 0..dim {
        for c in 0..r {
            let v = cov.get(c, r);
            cov.set(r, c, v);
        }
    }
    Ok(GaussianFit {
        mean,
        covariance: cov,
        count: samples.len(),
    })
}

/// Squared Fréchet distance between two Gaussian fits:
/// `‖μa − μb‖² + Tr(Σa) + Tr(Σb) − 2·Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
/// Negative eigenvalues from roundoff are clamped at zero, and tiny negative
/// totals are clamped so the result is non-negative.
pub fn frechet_gaussian(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::Dimension {
            what: "frechet fit dimensions",
            expected: a.mean.len(),
            got: b.mean.len(),
        });
    }
    let dmu = linalg::vec_sub(&a.mean, &b.mean);
    let mean_term = linalg::dot(&dmu, &dmu);
    let sqrt_a = linalg::sqrt_psd(&a.covariance)?;
    let inner = sqrt_a
        .matmul(&b.covariance)?
        .matmul(&sqrt_a)?
        .symmetrized();
    let (values, _) = linalg::jacobi_eigh(&inner)?;
    let cross: f64 = values.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let d2 = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

/// One scalar metric with its context.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub details: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        MetricReport {
            name: name.into(),
            value,
            details: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.details.insert(key.into(), value.to_string());
        self
    }
}

/// Crop-based Fréchet distance: one uniformly random contiguous crop of
/// length `crop_len` per long sample versus `count` reference short samples
/// produced by `reference(i)`. Crop offsets are keyed by `(seed, index)`.
pub fn fd_plus(
    long_samples: &[Vec<f64>],
    reference: &dyn Fn(usize) -> Result<Vec<f64>>,
    crop_len: usize,
    count: usize,
    seed: u64,
) -> Result<MetricReport> {
    if long_samples.is_empty() {
        return Err(Error::invalid("fd_plus needs at least one long sample"));
    }
    if crop_len == 0 || long_samples.iter().any(|s| s.len() < crop_len) {
        return Err(Error::invalid(format!(
            "crop length {crop_len} exceeds a long sample"
        )));
    }
    let crops: Vec<Vec<f64>> = long_samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let offsets = s.len() - crop_len + 1;
            let off = rng::index(rng::mix(&[seed, tag::CROP_POS, i as u64]), offsets);
            s[off..off + crop_len].to_vec()
        })
        .collect();
    let refs: Vec<Vec<f64>> = (0..count)
        .map(|i| {
            let r = reference(i)?;
            if r.len() != crop_len {
                return Err(Error::Dimension {
                    what: "reference sample",
                    expected: crop_len,
                    got: r.len(),
                });
            }
            Ok(r)
        })
        .collect::<Result<_>>()?;
    let fit_crops = fit_gaussian(&crops)?;
    let fit_refs = fit_gaussian(&refs)?;
    let d2 = frechet_gaussian(&fit_crops, &fit_refs)?;
    Ok(MetricReport::new("fd_plus", d2)
        .with("crop_len", crop_len)
        .with("crops", crops.len())
        .with("references", count)
        .with("seed", seed))
}

/// Seam statistic: mean squared first difference at boundary coordinates
/// over the same at interior coordinates. A boundary index `b` refers to the
/// difference `u[b] − u[b−1]`; 1.0 means boundaries are indistinguishable
/// from the interior.
pub fn seam_statistic(samples: &[Vec<f64>], boundaries: &[usize]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::invalid("seam statistic needs samples"));
    }
    let n = samples[0].len();
    if n < 2 {
        return Err(Error::invalid("seam statistic needs vectors of length >= 2"));
    }
    if boundaries.iter().any(|&b| b == 0 || b >= n) {
        return Err(Error::invalid("seam boundaries must be interior indices"));
    }
    let is_boundary = |i: usize| boundaries.contains(&i);
    let mut seam_acc = 0.0f64;
    let mut seam_n = 0usize;
    let mut interior_acc = 0.0f64;
    let mut interior_n = 0usize;
    for s in samples {
        for i in 1..n {
            let d = s[i] - s[i - 1];
            if is_boundary(i) {
                seam_acc += d * d;
                seam_n += 1;
            } else {
                interior_acc += d * d;
                interior_n += 1;
            }
        }
    }
    if seam_n == 0 || interior_n == 0 {
        return Err(Error::invalid(
            "seam statistic needs both boundary and interior differences",
        ));
    }
    let ratio = (seam_acc / seam_n as f64) / (interior_acc / interior_n as f64);
    Ok(MetricReport::new("seam_ratio", ratio)
        .with("boundaries", boundaries.len())
        .with("samples", samples.len()))
}

/// Kendall rank correlation between `0..n` and `values` (ties count as
/// discordant-neutral).
pub fn kendall_tau(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in (i + 1)..n {
            if values[j] > values[i] {
                concordant += 1;
            } else if values[j] < values[i] {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    (concordant - discordant) as f64 / pairs
}

/// Per-block moment profile for block-indexed sample sets (block index →
/// samples → values). Returns one report per block (value = variance, mean
/// in the details) followed by a summary report whose value is the maximum
/// relative deviation of block variances from their mean, with the Kendall
/// trend of variance against block index in the details.
pub fn drift_profile(blocks: &[Vec<Vec<f64>>]) -> Result<Vec<MetricReport>> {
    if blocks.len() < 2 {
        return Err(Error::invalid("drift profile needs at least 2 blocks"));
    }
    let mut variances = Vec::with_capacity(blocks.len());
    let mut reports = Vec::with_capacity(blocks.len() + 1);
    for (b, samples) in blocks.iter().enumerate() {
        let mut count = 0usize;
        let mut sum = 0.0f64;
        let mut sum_sq = 0.0f64;
        for s in samples {
            for &v in s {
                count += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
        if count < 2 {
            return Err(Error::invalid(format!("block {b} has fewer than 2 values")));
        }
        let mean = sum / count as f64;
        let var = (sum_sq - sum * sum / count as f64) / (count as f64 - 1.0);
        variances.push(var);
        reports.push(
            MetricReport::new("block_variance", var)
                .with("block", b)
                .with("mean", mean)
                .with("values", count),
        );
    }
    let grand = variances.iter().sum::<f64>() / variances.len() as f64;
    let spread = variances
        .iter()
        .fold(0.0f64, |m, &v| m.max((v - grand).abs()))
        / grand.abs().max(f64::MIN_POSITIVE);
    reports.push(
        MetricReport::new("drift_spread", spread)
            .with("blocks", blocks.len())
            .with("kendall_tau", kendall_tau(&variances))
            .with("mean_variance", grand),
    );
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou::OuProcess;
    use alloc::vec;

    #[test]
    fn fit_two_points() {
        let fit = fit_gaussian(&[vec![0.0], vec![2.0]]).unwrap();
        assert_eq!(fit.mean, vec![1.0]);
        assert_eq!(fit.covariance.get(0, 0), 2.0);
        assert_eq!(fit.count, 2);
    }

    #[test]
    fn fit_constant_samples_zero_covariance() {
        let fit = fit_gaussian(&vec![vec![3.0, -1.0]; 5]).unwrap();
        assert_eq!(fit.covariance.max_abs(), 0.0);
    }

    #[test]
    fn fit_rejects_single_sample() {
        assert!(fit_gaussian(&[vec![1.0]]).is_err());
    }

    #[test]
    fn fit_large_sample_accuracy() {
        let n = 100_000;
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                vec![
                    rng::standard_normal(rng::mix(&[200, i, 0])),
                    rng::standard_normal(rng::mix(&[200, i, 1])),
                ]
            })
            .collect();
        let fit = fit_gaussian(&samples).unwrap();
        assert!(fit.mean.iter().all(|m| m.abs() < 0.02));
        let gap = fit.covariance.sub(&Matrix::identity(2)).unwrap().max_abs();
        assert!(gap < 0.03, "cov gap {gap}");
    }

    #[test]
    fn frechet_identical_fits_zero() {
        let fit = fit_gaussian(&[vec![0.5, 1.0], vec![1.5, -1.0], vec![0.0, 0.3]]).unwrap();
        let d = frechet_gaussian(&fit, &fit).unwrap();
        assert!(d.abs() < 1e-9, "self distance {d}");
    }

    #[test]
    fn frechet_mean_shift_only() {
        // N(0,1) vs N(1,1): d² = 1.
        let a = GaussianFit {
            mean: vec![0.0],
            covariance: Matrix::identity(1),
            count: 10,
        };
        let b = GaussianFit {
            mean: vec![1.0],
            covariance: Matrix::identity(1),
            count: 10,
        };
        let d = frechet_gaussian(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn frechet_variance_mismatch() {
        // N(0,4) vs N(0,1): 4 + 1 − 2·2 = 1.
        let a = GaussianFit {
            mean: vec![0.0],
            covariance: Matrix::identity(1).scaled(4.0),
            count: 10,
        };
        let b = GaussianFit {
            mean: vec![0.0],
            covariance: Matrix::identity(1),
            count: 10,
        };
        let d = frechet_gaussian(&a, &b).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        // Symmetric.
        let d2 = frechet_gaussian(&b, &a).unwrap();
        assert!((d - d2).abs() < 1e-12);
    }

    #[test]
    fn frechet_symmetric_nonnegative_randomized() {
        for trial in 0..10u64 {
            let mk = |salt: u64| {
                let samples: Vec<Vec<f64>> = (0..200)
                    .map(|i| {
                        (0..3)
                            .map(|k| rng::standard_normal(rng::mix(&[salt, trial, i, k])))
                            .collect()
                    })
                    .collect();
                fit_gaussian(&samples).unwrap()
            };
            let a = mk(1);
            let b = mk(2);
            let ab = frechet_gaussian(&a, &b).unwrap();
            let ba = frechet_gaussian(&b, &a).unwrap();
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-9, "{ab} vs {ba}");
        }
    }

    #[test]
    fn fd_plus_self_distance_near_zero() {
        // Crops drawn from the reference distribution itself.
        let ou = OuProcess::new(0.8, 1.0).unwrap();
        let crop = 6;
        for seed in 0..3u64 {
            let long: Vec<Vec<f64>> = (0..10_000)
                .map(|i| ou.sample_path(24, rng::mix(&[seed, 300, i])))
                .collect();
            let reference =
                |i: usize| -> Result<Vec<f64>> { Ok(ou.sample_path(crop, rng::mix(&[seed, 301, i as u64]))) };
            let report = fd_plus(&long, &reference, crop, 10_000, seed).unwrap();
            assert!(
                report.value < 0.05 * crop as f64,
                "seed {seed}: self FD {}",
                report.value
            );
        }
    }

    #[test]
    fn fd_plus_full_length_crop_degenerates_to_plain_frechet() {
        let ou = OuProcess::new(0.5, 1.0).unwrap();
        let dim = 5;
        let long: Vec<Vec<f64>> = (0..2000)
            .map(|i| ou.sample_path(dim, rng::mix(&[310, i])))
            .collect();
        let reference = |i: usize| -> Result<Vec<f64>> { Ok(ou.sample_path(dim, rng::mix(&[311, i as u64]))) };
        let report = fd_plus(&long, &reference, dim, 2000, 0).unwrap();
        let refs: Vec<Vec<f64>> = (0..2000)
            .map(|i| ou.sample_path(dim, rng::mix(&[311, i])))
            .collect();
        let direct = frechet_gaussian(&fit_gaussian(&long).unwrap(), &fit_gaussian(&refs).unwrap())
            .unwrap();
        assert!((report.value - direct).abs() < 1e-12);
    }

    #[test]
    fn fd_plus_rejects_oversized_crop() {
        let long = vec![vec![0.0; 4]];
        let reference = |_: usize| -> Result<Vec<f64>> { Ok(vec![0.0; 8]) };
        assert!(fd_plus(&long, &reference, 8, 4, 0).is_err());
    }

    #[test]
    fn seam_ramp_is_exactly_one() {
        let ramp: Vec<f64> = (0..10).map(|i| 0.5 * i as f64).collect();
        let report = seam_statistic(&[ramp], &[5]).unwrap();
        assert!((report.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seam_white_noise_null_is_near_one() {
        // Independent standard-normal blocks: boundary and interior first
        // differences share the same variance, so the ratio has no signal.
        let samples: Vec<Vec<f64>> = (0..20_000)
            .map(|i| {
                (0..12)
                    .map(|k| rng::standard_normal(rng::mix(&[400, i, k])))
                    .collect()
            })
            .collect();
        let report = seam_statistic(&samples, &[4, 8]).unwrap();
        assert!((report.value - 1.0).abs() < 0.05, "ratio {}", report.value);
    }

    #[test]
    fn seam_detects_broken_correlation() {
        // Two independent OU blocks glued together: the boundary difference
        // has variance 2σ² instead of 2σ²(1−φ).
        let ou = OuProcess::with_correlation_length(5.0, 1.0).unwrap();
        let samples: Vec<Vec<f64>> = (0..20_000)
            .map(|i| {
                let mut a = ou.sample_path(8, rng::mix(&[500, i]));
                let b = ou.sample_path(8, rng::mix(&[501, i]));
                a.extend(b);
                a
            })
            .collect();
        let report = seam_statistic(&samples, &[8]).unwrap();
        assert!(report.value > 1.5, "ratio {}", report.value);
    }

    #[test]
    fn drift_null_spread_is_small() {
        let blocks: Vec<Vec<Vec<f64>>> = (0..16)
            .map(|b| {
                (0..4096)
                    .map(|i| vec![rng::standard_normal(rng::mix(&[600, b, i]))])
                    .collect()
            })
            .collect();
        let reports = drift_profile(&blocks).unwrap();
        let spread = reports.last().unwrap();
        assert_eq!(spread.name, "drift_spread");
        assert!(spread.value < 0.05, "spread {}", spread.value);
    }

    #[test]
    fn drift_detects_injected_inflation() {
        // 1% variance inflation per block over 16 blocks.
        let blocks: Vec<Vec<Vec<f64>>> = (0..16)
            .map(|b| {
                let scale = libm::pow(1.01, b as f64);
                (0..65_536)
                    .map(|i| vec![scale * rng::standard_normal(rng::mix(&[700, b, i]))])
                    .collect()
            })
            .collect();
        let reports = drift_profile(&blocks).unwrap();
        let tau: f64 = reports
            .last()
            .unwrap()
            .details
            .get("kendall_tau")
            .unwrap()
            .parse()
            .unwrap();
        assert!(tau > 0.8, "kendall tau {tau}");
    }

    #[test]
    fn drift_rejects_single_block() {
        let blocks = vec![vec![vec![0.0, 1.0]]];
        assert!(drift_profile(&blocks).is_err());
    }
}
