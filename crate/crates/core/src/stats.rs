//! Streaming moment accumulators, delta-method confidence intervals and
//! weighted least-squares fits of short-time limits.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Monte Carlo estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub ci: f64,
    pub n_paths: usize,
    pub discarded: usize,
}

impl McEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            ci: 0.0,
            n_paths: 0,
            discarded: 0,
        }
    }

    /// `|value − target| ≤ k·ci`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.ci
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            value: self.value * s,
            ci: self.ci * s.abs(),
            ..*self
        }
    }
}

/// Running mean, covariance (Chan–Welford) and extrema of a fixed-length
/// statistics vector. Merging in a fixed order makes results independent of
/// how samples were split across workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub dim: usize,
    /// Number of accumulated samples (antithetic pairs count once).
    pub n: usize,
    /// Paths behind the samples, discarded ones excluded.
    pub n_paths: usize,
    pub discarded: usize,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub max: Vec<f64>,
    pub min: Vec<f64>,
}

impl Moments {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            n: 0,
            n_paths: 0,
            discarded: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim * dim],
            max: vec![f64::NEG_INFINITY; dim],
            min: vec![f64::INFINITY; dim],
        }
    }

    pub fn push(&mut self, x: &[f64], paths: usize) {
        debug_assert_eq!(x.len(), self.dim);
        self.n += 1;
        self.n_paths += paths;
        let n = self.n as f64;
        let d = self.dim;
        let delta: Vec<f64> = (0..d).map(|i| x[i] - self.mean[i]).collect();
        for i in 0..d {
            self.mean[i] += delta[i] / n;
        }
        for i in 0..d {
            let di_new = x[i] - self.mean[i];
            for j in 0..d {
                self.m2[i * d + j] += delta[j] * di_new;
            }
            self.max[i] = self.max[i].max(x[i]);
            self.min[i] = self.min[i].min(x[i]);
        }
    }

    pub fn merge(&mut self, other: &Moments) {
        assert_eq!(self.dim, other.dim);
        self.discarded += other.discarded;
        self.n_paths += other.n_paths;
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            let discarded = self.discarded;
            let n_paths = self.n_paths;
            *self = other.clone();
            self.discarded = discarded;
            self.n_paths = n_paths;
            return;
        }
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        let d = self.dim;
        let delta: Vec<f64> = (0..d).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..d {
            for j in 0..d {
                self.m2[i * d + j] += other.m2[i * d + j] + delta[i] * delta[j] * na * nb / n;
            }
            self.mean[i] += delta[i] * nb / n;
            self.max[i] = self.max[i].max(other.max[i]);
            self.min[i] = self.min[i].min(other.min[i]);
        }
        self.n += other.n;
    }

    /// Sample covariance of components `i`, `j`.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.m2[i * self.dim + j] / (self.n as f64 - 1.0)
    }

    /// Estimate of component `i`.
    pub fn component(&self, i: usize) -> McEstimate {
        self.estimate(|m| m[i])
    }

    /// Delta-method estimate of `g(E[stats])`, gradient by central differences.
    pub fn estimate(&self, g: impl Fn(&[f64]) -> f64) -> McEstimate {
        let value = g(&self.mean);
        let d = self.dim;
        let mut grad = vec![0.0; d];
        let mut probe = self.mean.clone();
        for i in 0..d {
            let sd = self.cov(i, i).sqrt();
            if sd == 0.0 {
                continue;
            }
            let h = 1e-6 * sd.max(1e-6 * self.mean[i].abs());
            probe[i] = self.mean[i] + h;
            let up = g(&probe);
            probe[i] = self.mean[i] - h;
            let down = g(&probe);
            probe[i] = self.mean[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        let mut var = 0.0;
        for i in 0..d {
            if grad[i] == 0.0 {
                continue;
            }
            for j in 0..d {
                var += grad[i] * grad[j] * self.cov(i, j);
            }
        }
        let n = self.n.max(1) as f64;
        McEstimate {
            value,
            ci: Z95 * (var.max(0.0) / n).sqrt(),
            n_paths: self.n_paths,
            discarded: self.discarded,
        }
    }
}

/// Regressor of a short-time fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LimitMode {
    /// `a + b·T`.
    Interior,
    /// `a + b·√T`.
    Boundary,
}

impl LimitMode {
    pub fn regressor(self, t: f64) -> f64 {
        match self {
            LimitMode::Interior => t,
            LimitMode::Boundary => t.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitFit {
    pub mode: LimitMode,
    pub schedule: Vec<f64>,
    pub points: Vec<McEstimate>,
    pub intercept: McEstimate,
    pub slope: McEstimate,
    pub residuals: Vec<f64>,
    /// χ² per degree of freedom of the weighted fit.
    pub reduced_chi2: f64,
    pub condition: f64,
}

/// Largest acceptable condition number of the normal equations.
pub const MAX_FIT_CONDITION: f64 = 1e10;

/// Weighted least squares `y ≈ a + b·s(T)` with weights `1/ci²`.
pub fn fit_limit(mode: LimitMode, schedule: &[f64], points: &[McEstimate]) -> Result<LimitFit> {
    if schedule.len() != points.len() {
        return Err(invalid("schedule", "one estimate per horizon is required"));
    }
    if schedule.len() < 4 {
        return Err(invalid("schedule", "at least four horizons are required"));
    }
    if schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("schedule", "horizons must be strictly decreasing"));
    }
    let floor = points.iter().map(|p| p.ci).filter(|c| *c > 0.0).fold(f64::INFINITY, f64::min);
    let floor = if floor.is_finite() { floor * 1e-3 } else { 1.0 };
    let (mut sw, mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, p) in schedule.iter().zip(points) {
        let sigma = (p.ci / Z95).max(floor);
        let w = 1.0 / (sigma * sigma);
        let x = mode.regressor(*t);
        sw += w;
        sx += w * x;
        sxx += w * x * x;
        sy += w * p.value;
        sxy += w * x * p.value;
    }
    let det = sw * sxx - sx * sx;
    let tr = sw + sxx;
    let lmin = (tr - (tr * tr - 4.0 * det).max(0.0).sqrt()) / 2.0;
    let lmax = tr - lmin;
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition < MAX_FIT_CONDITION) {
        return Err(Error::IllConditionedFit(condition));
    }
    let a = (sxx * sy - sx * sxy) / det;
    let b = (sw * sxy - sx * sy) / det;
    let var_a = sxx / det;
    let var_b = sw / det;
    let mut chi2 = 0.0;
    let residuals: Vec<f64> = schedule
        .iter()
        .zip(points)
        .map(|(t, p)| {
            let r = p.value - (a + b * mode.regressor(*t));
            let sigma = (p.ci / Z95).max(floor);
            chi2 += (r / sigma).powi(2);
            r
        })
        .collect();
    let dof = (schedule.len() - 2) as f64;
    let n_paths = points.iter().map(|p| p.n_paths).sum();
    let discarded = points.iter().map(|p| p.discarded).sum();
    Ok(LimitFit {
        mode,
        schedule: schedule.to_vec(),
        points: points.to_vec(),
        intercept: McEstimate {
            value: a,
            ci: Z95 * var_a.sqrt(),
            n_paths,
            discarded,
        },
        slope: McEstimate {
            value: b,
            ci: Z95 * var_b.sqrt(),
            n_paths,
            discarded,
        },
        residuals,
        reduced_chi2: chi2 / dof,
        condition,
    })
}

/// `T_max·2^{−j}`, `j = 0..len`.
pub fn dyadic_schedule(t_max: f64, len: usize) -> Vec<f64> {
    (0..len).map(|j| t_max / (1u64 << j) as f64).collect()
}
