//! Variance-exploding noise schedules and sampler time grids.
//!
//! A schedule maps diffusion time `t` to the noise standard deviation `σ(t)`
//! of the forward process `u_t = u_0 + σ(t)·ε`. Both kinds are strictly
//! increasing, so time and noise level are interchangeable through
//! [`NoiseSchedule::time_of_sigma`].

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Variance-exploding schedule.
///
/// * `LinearVe`: `σ(t) = t` on `t ∈ [σ_min, σ_max]` — time *is* the noise
///   level, which keeps sampler updates in their simplest form.
/// * `GeometricVe`: `σ(t) = σ_min·(σ_max/σ_min)^t` on `t ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSchedule {
    LinearVe { sigma_min: f64, sigma_max: f64 },
    GeometricVe { sigma_min: f64, sigma_max: f64 },
}

impl NoiseSchedule {
    pub fn linear_ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        check_range(sigma_min, sigma_max)?;
        Ok(NoiseSchedule::LinearVe {
            sigma_min,
            sigma_max,
        })
    }

    pub fn geometric_ve(sigma_min: f64, sigma_max: f64) -> Result<Self> {
        check_range(sigma_min, sigma_max)?;
        Ok(NoiseSchedule::GeometricVe {
            sigma_min,
            sigma_max,
        })
    }

    pub fn sigma_min(&self) -> f64 {
        match *self {
            NoiseSchedule::LinearVe { sigma_min, .. }
            | NoiseSchedule::GeometricVe { sigma_min, .. } => sigma_min,
        }
    }

    pub fn sigma_max(&self) -> f64 {
        match *self {
            NoiseSchedule::LinearVe { sigma_max, .. }
            | NoiseSchedule::GeometricVe { sigma_max, .. } => sigma_max,
        }
    }

    /// Valid time interval `[t_lo, t_hi]`.
    pub fn domain(&self) -> (f64, f64) {
        match *self {
            NoiseSchedule::LinearVe {
                sigma_min,
                sigma_max,
            } => (sigma_min, sigma_max),
            NoiseSchedule::GeometricVe { .. } => (0.0, 1.0),
        }
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        // Tolerate a hair of roundoff from grid construction.
        let slack = 1e-12 * (1.0 + hi.abs());
        if !(t >= lo - slack && t <= hi + slack) || !t.is_finite() {
            return Err(Error::Domain {
                what: "schedule time t",
                value: t,
                lo,
                hi,
            });
        }
        Ok(())
    }

    /// Noise level `σ(t)`.
    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match *self {
            NoiseSchedule::LinearVe { .. } => t,
            NoiseSchedule::GeometricVe {
                sigma_min,
                sigma_max,
            } => sigma_min * libm::pow(sigma_max / sigma_min, t),
        })
    }

    /// Time derivative `dσ/dt`.
    pub fn sigma_dot(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match *self {
            NoiseSchedule::LinearVe { .. } => 1.0,
            NoiseSchedule::GeometricVe {
                sigma_min,
                sigma_max,
            } => {
                let ratio = sigma_max / sigma_min;
                sigma_min * libm::pow(ratio, t) * libm::log(ratio)
            }
        })
    }

    /// Inverse of [`Self::sigma`].
    pub fn time_of_sigma(&self, sigma: f64) -> Result<f64> {
        let (lo, hi) = (self.sigma_min(), self.sigma_max());
        let slack = 1e-12 * (1.0 + hi);
        if !(sigma >= lo - slack && sigma <= hi + slack) || !sigma.is_finite() {
            return Err(Error::Domain {
                what: "noise level sigma",
                value: sigma,
                lo,
                hi,
            });
        }
        Ok(match *self {
            NoiseSchedule::LinearVe { .. } => sigma,
            NoiseSchedule::GeometricVe {
                sigma_min,
                sigma_max,
            } => libm::log(sigma / sigma_min) / libm::log(sigma_max / sigma_min),
        })
    }

    /// Builds a `K`-step grid whose noise levels interpolate from `σ_max`
    /// down to `σ_min` with warp exponent `rho`:
    /// `σ_k = (σ_max^{1/ρ} + (k/K)·(σ_min^{1/ρ} − σ_max^{1/ρ}))^ρ`.
    /// Larger `rho` concentrates steps near the low-noise end.
    pub fn karras_grid(&self, steps: usize, rho: f64) -> Result<TimeGrid> {
        if steps == 0 {
            return Err(Error::invalid("time grid needs at least 1 step"));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Domain {
                what: "grid exponent rho",
                value: rho,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let (s_min, s_max) = (self.sigma_min(), self.sigma_max());
        let a = libm::pow(s_max, 1.0 / rho);
        let b = libm::pow(s_min, 1.0 / rho);
        let mut times = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            // Pin the endpoints exactly; pow round-trips are not exact.
            let sigma = if k == 0 {
                s_max
            } else if k == steps {
                s_min
            } else {
                let frac = k as f64 / steps as f64;
                libm::pow(a + frac * (b - a), rho)
            };
            times.push(self.time_of_sigma(sigma)?);
        }
        TimeGrid::from_times(times)
    }
}

fn check_range(sigma_min: f64, sigma_max: f64) -> Result<()> {
    if !(sigma_min > 0.0 && sigma_max > sigma_min) || !sigma_max.is_finite() {
        return Err(Error::invalid(
            "noise schedule requires 0 < sigma_min < sigma_max < inf",
        ));
    }
    Ok(())
}

/// Strictly decreasing sampler times, highest noise first.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    /// Validates that `times` is strictly decreasing with at least 2 entries.
    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("time grid needs at least 2 points"));
        }
        for w in times.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::invalid(
                    "time grid must be strictly decreasing without duplicates",
                ));
            }
        }
        Ok(TimeGrid { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of integration steps (one less than the number of points).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("grid is non-empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_is_identity() {
        let s = NoiseSchedule::linear_ve(0.1, 10.0).unwrap();
        assert_eq!(s.sigma(5.0).unwrap(), 5.0);
        assert_eq!(s.sigma_dot(3.3).unwrap(), 1.0);
    }

    #[test]
    fn geometric_endpoints_and_midpoint() {
        let s = NoiseSchedule::geometric_ve(0.1, 10.0).unwrap();
        assert!((s.sigma(0.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.sigma(1.0).unwrap() - 10.0).abs() < 1e-12);
        // Geometric midpoint: sqrt(0.1 * 10) = 1.
        assert!((s.sigma(0.5).unwrap() - 1.0).abs() < 1e-12);
        // Closed-form derivative at 0: 0.1 * ln(100).
        let d0 = s.sigma_dot(0.0).unwrap();
        assert!((d0 - 0.1 * libm::log(100.0)).abs() < 1e-12);
    }

    #[test]
    fn domain_errors_name_the_interval() {
        let s = NoiseSchedule::linear_ve(0.1, 10.0).unwrap();
        match s.sigma(11.0) {
            Err(Error::Domain { lo, hi, .. }) => {
                assert_eq!((lo, hi), (0.1, 10.0));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        assert!(s.sigma(0.05).is_err());
    }

    #[test]
    fn sigma_dot_matches_finite_differences() {
        // Central differences at 100 uniform points, relative error < 1e-6.
        let h = 1e-5;
        for sched in [
            NoiseSchedule::linear_ve(0.1, 10.0).unwrap(),
            NoiseSchedule::geometric_ve(0.1, 10.0).unwrap(),
            NoiseSchedule::geometric_ve(0.002, 80.0).unwrap(),
        ] {
            let (lo, hi) = sched.domain();
            for i in 0..100 {
                let t = lo + (hi - lo) * (i as f64 + 0.5) / 100.0;
                let fd = (sched.sigma(t + h).unwrap() - sched.sigma(t - h).unwrap()) / (2.0 * h);
                let an = sched.sigma_dot(t).unwrap();
                assert!(
                    ((an - fd) / an).abs() < 1e-6,
                    "t={t}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn finite_difference_at_probe_point() {
        let s = NoiseSchedule::geometric_ve(0.1, 10.0).unwrap();
        let t = 0.37;
        let h = 1e-5;
        let fd = (s.sigma(t + h).unwrap() - s.sigma(t - h).unwrap()) / (2.0 * h);
        let an = s.sigma_dot(t).unwrap();
        assert!(((an - fd) / an).abs() < 1e-6);
    }

    #[test]
    fn karras_endpoints_only() {
        let s = NoiseSchedule::linear_ve(0.1, 10.0).unwrap();
        let g = s.karras_grid(1, 3.0).unwrap();
        assert_eq!(g.times(), &[10.0, 0.1]);
    }

    #[test]
    fn karras_linear_midpoint() {
        let s = NoiseSchedule::linear_ve(0.1, 10.0).unwrap();
        let g = s.karras_grid(2, 1.0).unwrap();
        assert_eq!(g.times().len(), 3);
        assert!((g.times()[1] - 5.05).abs() < 1e-12);
    }

    #[test]
    fn karras_monotone_decreasing() {
        let s = NoiseSchedule::linear_ve(0.002, 80.0).unwrap();
        let g = s.karras_grid(10, 7.0).unwrap();
        for w in g.times().windows(2) {
            assert!(w[1] < w[0]);
        }
        assert_eq!(g.start(), 80.0);
        assert_eq!(g.end(), 0.002);
    }

    #[test]
    fn karras_rejects_zero_steps() {
        let s = NoiseSchedule::linear_ve(0.1, 10.0).unwrap();
        assert!(matches!(s.karras_grid(0, 7.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn sigma_strictly_increasing() {
        for sched in [
            NoiseSchedule::linear_ve(0.05, 20.0).unwrap(),
            NoiseSchedule::geometric_ve(0.05, 20.0).unwrap(),
        ] {
            let (lo, hi) = sched.domain();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=200 {
                let t = lo + (hi - lo) * i as f64 / 200.0;
                let s = sched.sigma(t).unwrap();
                assert!(s > prev);
                prev = s;
            }
        }
    }

    #[test]
    fn grid_sigma_decreasing_under_schedule() {
        let s = NoiseSchedule::geometric_ve(0.01, 5.0).unwrap();
        let g = s.karras_grid(37, 7.0).unwrap();
        let mut prev = f64::INFINITY;
        for &t in g.times() {
            let sig = s.sigma(t).unwrap();
            assert!(sig < prev);
            prev = sig;
        }
    }
}
