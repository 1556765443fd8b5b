//! Two-dimensional conformal charts: metric `λ(y)²·δ` on a domain of ℝ².
//!
//! `λ = base_scale / φ`, where the base is either flat ℝ² (scale 1) or the
//! unit sphere seen through the stereographic chart centered at `(1,0,0)`
//! (scale `2/(1+|y|²)`), and φ is a conformal factor evaluated on the base
//! point. The Laplace–Beltrami operator of such a metric is `λ⁻²·Δ_flat`.

use serde::{Deserialize, Serialize};

use super::factor::{BaseGeometry, ConformalFactor};
use super::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChartBase {
    Flat,
    /// Inverse chart `y ↦ ((1−|y|²), 2y₁, 2y₂)/(1+|y|²)`.
    Stereographic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalDisk {
    pub base: ChartBase,
    pub factor: ConformalFactor,
}

const FD_LAPLACIAN_STEP: f64 = 1e-5;

impl ConformalDisk {
    pub fn new(base: ChartBase, factor: ConformalFactor) -> Self {
        Self { base, factor }
    }

    pub fn base_geometry(&self) -> BaseGeometry {
        match self.base {
            ChartBase::Flat => BaseGeometry::Flat,
            ChartBase::Stereographic => BaseGeometry::Sphere,
        }
    }

    /// Base-manifold ambient point of chart point `y`.
    pub fn base_point(&self, y: &Vector) -> Vector {
        match self.base {
            ChartBase::Flat => Vector::new(y[0], y[1], 0.0, 0.0),
            ChartBase::Stereographic => {
                let r2 = y[0] * y[0] + y[1] * y[1];
                let s = 1.0 + r2;
                Vector::new((1.0 - r2) / s, 2.0 * y[0] / s, 2.0 * y[1] / s, 0.0)
            }
        }
    }

    /// Chart point of a base point (inverse of [`Self::base_point`]).
    pub fn chart_point(&self, b: &Vector) -> Vector {
        match self.base {
            ChartBase::Flat => Vector::new(b[0], b[1], 0.0, 0.0),
            ChartBase::Stereographic => {
                let s = 1.0 + b[0];
                Vector::new(b[1] / s, b[2] / s, 0.0, 0.0)
            }
        }
    }

    /// `Jᵀ w` for the Jacobian `J` of [`Self::base_point`] at `y`.
    pub fn pullback(&self, y: &Vector, w: &Vector) -> Vector {
        match self.base {
            ChartBase::Flat => Vector::new(w[0], w[1], 0.0, 0.0),
            ChartBase::Stereographic => {
                let s = 1.0 + y[0] * y[0] + y[1] * y[1];
                let s2 = s * s;
                let mut out = Vector::zeros();
                for j in 0..2 {
                    // ∂_j p₀ = −4 y_j / s², ∂_j p_{1+k} = 2δ_kj/s − 4 y_k y_j / s²
                    let mut acc = -4.0 * y[j] / s2 * w[0];
                    for k in 0..2 {
                        let djk = if j == k { 2.0 / s } else { 0.0 };
                        acc += (djk - 4.0 * y[k] * y[j] / s2) * w[1 + k];
                    }
                    out[j] = acc;
                }
                out
            }
        }
    }

    pub fn phi(&self, y: &Vector) -> f64 {
        self.factor.value(self.base_geometry(), &self.base_point(y))
    }

    fn base_scale(&self, y: &Vector) -> f64 {
        match self.base {
            ChartBase::Flat => 1.0,
            ChartBase::Stereographic => 2.0 / (1.0 + y[0] * y[0] + y[1] * y[1]),
        }
    }

    /// Metric scale λ(y); `+∞` where φ vanishes.
    pub fn lambda(&self, y: &Vector) -> f64 {
        let phi = self.phi(y);
        if phi <= 0.0 {
            f64::INFINITY
        } else {
            self.base_scale(y) / phi
        }
    }

    /// Flat gradient of `log λ`.
    pub fn grad_log_lambda(&self, y: &Vector) -> Vector {
        let base = match self.base {
            ChartBase::Flat => Vector::zeros(),
            ChartBase::Stereographic => {
                let s = 1.0 + y[0] * y[0] + y[1] * y[1];
                Vector::new(-2.0 * y[0] / s, -2.0 * y[1] / s, 0.0, 0.0)
            }
        };
        let geo = self.base_geometry();
        let b = self.base_point(y);
        let phi = self.factor.value(geo, &b);
        let grad_phi = self.factor.ambient_gradient(geo, &b);
        base - self.pullback(y, &grad_phi) / phi
    }

    /// Gaussian curvature `−λ⁻² Δ_flat log λ`, Laplacian by central differences.
    pub fn gaussian_curvature(&self, y: &Vector) -> f64 {
        let h = FD_LAPLACIAN_STEP;
        let mut lap = 0.0;
        for k in 0..2 {
            let mut e = Vector::zeros();
            e[k] = h;
            lap += (self.grad_log_lambda(&(y + e))[k] - self.grad_log_lambda(&(y - e))[k]) / (2.0 * h);
        }
        let lam = self.lambda(y);
        -lap / (lam * lam)
    }

    /// Christoffel contraction `Γ(a, b)` for `λ²δ`, given `∇ log λ`.
    pub(crate) fn christoffel(grad_u: &Vector, a: &Vector, b: &Vector) -> Vector {
        a * b.dot(grad_u) + b * a.dot(grad_u) - grad_u * a.dot(b)
    }

    /// Integrates the geodesic with initial velocity `v` for unit time while
    /// transporting `frame` along it (RK4).
    pub fn geodesic_transport(&self, y: &Vector, v: &Vector, frame: &mut [Vector]) -> (Vector, Vector) {
        let speed = v.norm() * self.lambda(y);
        let substeps = ((speed / 0.05).ceil() as usize).clamp(1, 64);
        let h = 1.0 / substeps as f64;
        let n = frame.len();
        let mut pos = *y;
        let mut vel = *v;
        let deriv = |p: &Vector, vel: &Vector, fr: &[Vector], out_fr: &mut [Vector]| -> (Vector, Vector) {
            let gu = self.grad_log_lambda(p);
            for (o, f) in out_fr.iter_mut().zip(fr) {
                *o = -Self::christoffel(&gu, f, vel);
            }
            (*vel, -Self::christoffel(&gu, vel, vel))
        };
        let mut k_fr = [[Vector::zeros(); 3]; 4];
        let mut tmp = [Vector::zeros(); 3];
        for _ in 0..substeps {
            let (k1p, k1v) = deriv(&pos, &vel, &frame[..n], &mut k_fr[0][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k_fr[0][i] * (0.5 * h);
            }
            let (k2p, k2v) = deriv(&(pos + k1p * (0.5 * h)), &(vel + k1v * (0.5 * h)), &tmp[..n], &mut k_fr[1][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k_fr[1][i] * (0.5 * h);
            }
            let (k3p, k3v) = deriv(&(pos + k2p * (0.5 * h)), &(vel + k2v * (0.5 * h)), &tmp[..n], &mut k_fr[2][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k_fr[2][i] * h;
            }
            let (k4p, k4v) = deriv(&(pos + k3p * h), &(vel + k3v * h), &tmp[..n], &mut k_fr[3][..n]);
            pos += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (h / 6.0);
            vel += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
            for i in 0..n {
                frame[i] += (k_fr[0][i] + k_fr[1][i] * 2.0 + k_fr[2][i] * 2.0 + k_fr[3][i]) * (h / 6.0);
            }
        }
        (pos, vel)
    }

    /// Transports `frame` along the straight chart segment from `x` to `y`.
    pub fn segment_transport(&self, x: &Vector, y: &Vector, frame: &mut [Vector]) {
        let d = y - x;
        let substeps = 4;
        let h = 1.0 / substeps as f64;
        let n = frame.len();
        let rhs = |t: f64, fr: &[Vector], out: &mut [Vector]| {
            let gu = self.grad_log_lambda(&(x + d * t));
            for (o, f) in out.iter_mut().zip(fr) {
                *o = -Self::christoffel(&gu, f, &d);
            }
        };
        let mut k = [[Vector::zeros(); 3]; 4];
        let mut tmp = [Vector::zeros(); 3];
        for s in 0..substeps {
            let t = s as f64 * h;
            rhs(t, &frame[..n], &mut k[0][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k[0][i] * (0.5 * h);
            }
            rhs(t + 0.5 * h, &tmp[..n], &mut k[1][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k[1][i] * (0.5 * h);
            }
            rhs(t + 0.5 * h, &tmp[..n], &mut k[2][..n]);
            for i in 0..n {
                tmp[i] = frame[i] + k[2][i] * h;
            }
            rhs(t + h, &tmp[..n], &mut k[3][..n]);
            for i in 0..n {
                frame[i] += (k[0][i] + k[1][i] * 2.0 + k[2][i] * 2.0 + k[3][i]) * (h / 6.0);
            }
        }
    }
}
