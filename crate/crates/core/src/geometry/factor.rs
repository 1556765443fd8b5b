//! Conformal factors and the smooth radial profiles they are built from.

use serde::{Deserialize, Serialize};

use super::Vector;

/// Degree-7 smoothstep, C³ at both ends: 0 for t ≤ 0, 1 for t ≥ 1.
pub fn smoothstep7(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        let t4 = t * t * t * t;
        t4 * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)))
    }
}

pub fn smoothstep7_deriv(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        let t3 = t * t * t;
        140.0 * t3 * (1.0 - t) * (1.0 - t) * (1.0 - t)
    }
}

/// Cutoff profile ℓ: equal to 1 on `[0, r_in]`, 0 on `[r_out, ∞)`, smoothstep in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub r_in: f64,
    pub r_out: f64,
}

impl Cutoff {
    pub fn new(r_in: f64, r_out: f64) -> Self {
        assert!(r_in > 0.0 && r_out > r_in, "cutoff radii must satisfy 0 < r_in < r_out");
        Self { r_in, r_out }
    }

    pub fn value(&self, s: f64) -> f64 {
        1.0 - smoothstep7((s - self.r_in) / (self.r_out - self.r_in))
    }

    pub fn deriv(&self, s: f64) -> f64 {
        let w = self.r_out - self.r_in;
        -smoothstep7_deriv((s - self.r_in) / w) / w
    }
}

/// Geometry of the space a conformal factor lives on. Points are given in
/// ambient coordinates (unit vectors for the sphere).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseGeometry {
    Flat,
    Sphere,
}

impl BaseGeometry {
    pub fn distance(self, a: &Vector, b: &Vector) -> f64 {
        match self {
            BaseGeometry::Flat => (a - b).norm(),
            BaseGeometry::Sphere => a.dot(b).clamp(-1.0, 1.0).acos(),
        }
    }

    /// Ambient gradient of `x ↦ distance(x, c)`; zero at the center.
    fn distance_gradient(self, x: &Vector, c: &Vector) -> Vector {
        match self {
            BaseGeometry::Flat => {
                let r = (x - c).norm();
                if r == 0.0 {
                    Vector::zeros()
                } else {
                    (x - c) / r
                }
            }
            BaseGeometry::Sphere => {
                let cth = x.dot(c).clamp(-1.0, 1.0);
                let sth = (1.0 - cth * cth).sqrt();
                if sth < 1e-300 {
                    Vector::zeros()
                } else {
                    -c / sth
                }
            }
        }
    }
}

/// A conformal factor φ with 0 ≤ φ ≤ 1. The changed metric is φ⁻² g.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConformalFactor {
    /// φ ≡ 1.
    One,
    /// φ = ℓ(ρ(x, center)): 1 on the inner ball, 0 outside the outer ball.
    Cutoff { center: Vector, cutoff: Cutoff },
    /// φ = 1 − depth·(1 − |x−c|²/R²)⁴ inside the chordal ball of radius R, 1 outside.
    Bump { center: Vector, radius: f64, depth: f64 },
    /// φ = exp(−rate·|x−c|²).
    Gaussian { center: Vector, rate: f64 },
    /// φ = exp(rate·(⟨a, x⟩ − 1)), with |a| = 1 on the sphere so that φ ≤ 1.
    Exponential { direction: Vector, rate: f64 },
}

impl ConformalFactor {
    pub fn value(&self, base: BaseGeometry, x: &Vector) -> f64 {
        match self {
            ConformalFactor::One => 1.0,
            ConformalFactor::Cutoff { center, cutoff } => cutoff.value(base.distance(x, center)),
            ConformalFactor::Bump { center, radius, depth } => {
                let q = (x - center).norm_squared() / (radius * radius);
                if q >= 1.0 {
                    1.0
                } else {
                    1.0 - depth * (1.0 - q).powi(4)
                }
            }
            ConformalFactor::Gaussian { center, rate } => (-rate * (x - center).norm_squared()).exp(),
            ConformalFactor::Exponential { direction, rate } => (rate * (direction.dot(x) - 1.0)).exp(),
        }
    }

    /// Ambient gradient (not projected to the tangent space).
    pub fn ambient_gradient(&self, base: BaseGeometry, x: &Vector) -> Vector {
        match self {
            ConformalFactor::One => Vector::zeros(),
            ConformalFactor::Cutoff { center, cutoff } => {
                let s = base.distance(x, center);
                let d = cutoff.deriv(s);
                if d == 0.0 {
                    Vector::zeros()
                } else {
                    base.distance_gradient(x, center) * d
                }
            }
            ConformalFactor::Bump { center, radius, depth } => {
                let r2 = radius * radius;
                let q = (x - center).norm_squared() / r2;
                if q >= 1.0 {
                    Vector::zeros()
                } else {
                    (x - center) * (8.0 * depth * (1.0 - q).powi(3) / r2)
                }
            }
            ConformalFactor::Gaussian { center, rate } => {
                (x - center) * (-2.0 * rate * self.value(base, x))
            }
            ConformalFactor::Exponential { direction, rate } => direction * (rate * self.value(base, x)),
        }
    }

    /// True when φ is identically 1 on the base-metric ball `B_r(x)`.
    pub fn is_one_on_ball(&self, base: BaseGeometry, x: &Vector, r: f64) -> bool {
        match self {
            ConformalFactor::One => true,
            ConformalFactor::Cutoff { center, cutoff } => base.distance(x, center) + r <= cutoff.r_in,
            ConformalFactor::Bump { center, radius, .. } => {
                // chordal distance ≥ radius on the whole ball
                let d = base.distance(x, center);
                let gap = match base {
                    BaseGeometry::Flat => d - r,
                    BaseGeometry::Sphere => 2.0 * ((d - r).max(0.0) / 2.0).sin(),
                };
                d > r && gap >= *radius
            }
            ConformalFactor::Gaussian { .. } | ConformalFactor::Exponential { .. } => false,
        }
    }
}
