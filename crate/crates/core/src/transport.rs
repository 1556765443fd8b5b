//! The damped transport `Q_{s,t}`: a matrix process in frame coordinates that
//! shrinks vectors by accumulated Bakry–Émery curvature, boundary curvature
//! and boundary projections. Discretized by forward multiplicative Euler,
//! one factor of each kind per step in the order curvature, second form,
//! projection.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Observer, PathSample, StepView};
use crate::error::{invalid, Result};
use crate::geometry::{eye, operator_norm, CurvatureBounds, Frame, ManifoldSpec, Mat, Point};

/// `P_u = (u⁻¹N)(u⁻¹N)ᵀ` at a boundary frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalProjection {
    pub matrix: Mat,
    pub dim: usize,
}

impl NormalProjection {
    pub fn new(m: &ManifoldSpec, x: &Point, frame: &Frame) -> Result<Self> {
        if !m.has_boundary() {
            return Err(invalid("manifold", "has no boundary"));
        }
        Ok(Self { matrix: m.normal_projection(x, frame), dim: frame.dim })
    }

    /// `I − P_u`.
    pub fn complement(&self) -> Mat {
        eye(self.dim) - self.matrix
    }
}

/// Per-step factor of the multiplicative Euler scheme for one step.
fn step_factor(m: &ManifoldSpec, v: &StepView<'_>) -> Mat {
    let d = v.from_frame.dim;
    let id = eye(d);
    let mut f = id - m.ricci_z_matrix(v.from, v.from_frame) * v.dt;
    if v.dl > 0.0 {
        f *= id - m.second_form_matrix_near(v.to, v.to_frame) * v.dl;
    }
    if v.hit {
        f *= id - m.normal_projection(v.to, v.to_frame);
    } else if m.has_boundary() {
        // The continuous path touches ∂M between two interior knots with the
        // Brownian-bridge probability exp(−a·b/Δt) (generator Δ, so variance
        // 2Δt). Q is linear in each step factor, so averaging the projection
        // over that event keeps 𝔼[Q] unbiased.
        let p = bridge_touch(m, v);
        if p > 0.0 {
            f *= id - m.normal_projection(v.to, v.to_frame) * p;
        }
    }
    f
}

fn bridge_touch(m: &ManifoldSpec, v: &StepView<'_>) -> f64 {
    let a = m.boundary_data(v.from).distance;
    let b = m.boundary_data(v.to).distance;
    if !(a.is_finite() && b.is_finite()) || v.dt <= 0.0 {
        return 0.0;
    }
    (-(a.max(0.0) * b.max(0.0)) / v.dt).exp()
}

/// Increment of `A(t) = ∫K dr + ∫σ dl` over one step: left point for `K`,
/// the post-reflection point for `σ` (where the `dl` mass is deposited).
pub fn bound_increment(bounds: &CurvatureBounds, v: &StepView<'_>) -> f64 {
    let mut a = bounds.k.eval(v.from) * v.dt;
    if v.dl > 0.0 {
        a += bounds.sigma.eval(v.to) * v.dl;
    }
    a
}

/// Prefix integrals `A(t_k)`, `k = 0..=n`, along a recorded path.
pub fn accumulated_bound(m: &ManifoldSpec, path: &PathSample, bounds: &CurvatureBounds) -> Vec<f64> {
    let mut out = Vec::with_capacity(path.points.len());
    out.push(0.0);
    let mut a = 0.0;
    for_each_step(m, path, 0, |v| {
        a += bound_increment(bounds, v);
        out.push(a);
    });
    out
}

/// Replays the recorded steps `from..n` as [`StepView`]s.
pub fn for_each_step(_m: &ManifoldSpec, path: &PathSample, from: usize, mut f: impl FnMut(&StepView<'_>)) {
    let dt = path.dt();
    for k in from..path.n_steps() {
        f(&StepView {
            index: k,
            dt,
            from: &path.points[k],
            from_frame: &path.frames[k],
            to: &path.points[k + 1],
            to_frame: &path.frames[k + 1],
            dw: &path.dw[k],
            dl: path.dl[k],
            hit: path.hits[k],
        });
    }
}

/// Knot `k` lies on ∂M: it was produced by a reflection, or it is a start
/// point on the boundary.
pub fn at_boundary(m: &ManifoldSpec, path: &PathSample, k: usize) -> bool {
    if k == 0 {
        m.has_boundary() && m.on_boundary(&path.points[0])
    } else {
        path.hits[k - 1]
    }
}

/// `Q_{s, t_k}` for every knot `k ≥ s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampedTransport {
    pub start: usize,
    pub dim: usize,
    pub matrices: Vec<Mat>,
}

impl DampedTransport {
    /// `Q_{s, t_k}`; `k` must be at least the start knot.
    pub fn at(&self, k: usize) -> &Mat {
        &self.matrices[k - self.start]
    }

    pub fn terminal(&self) -> &Mat {
        self.matrices.last().expect("empty transport")
    }
}

pub fn evolve_q(path: &PathSample, m: &ManifoldSpec, s_index: usize) -> Result<DampedTransport> {
    if s_index > path.n_steps() {
        return Err(invalid("s_index", format!("{s_index} exceeds the {} steps of the path", path.n_steps())));
    }
    let d = m.dim();
    let mut q = eye(d);
    if at_boundary(m, path, s_index) {
        q -= m.normal_projection(&path.points[s_index], &path.frames[s_index]);
    }
    let mut matrices = Vec::with_capacity(path.n_steps() + 1 - s_index);
    matrices.push(q);
    for_each_step(m, path, s_index, |v| {
        q *= step_factor(m, v);
        matrices.push(q);
    });
    Ok(DampedTransport { start: s_index, dim: d, matrices })
}

/// Streaming `Q_{0,t}` and `A(t)` along a path being simulated.
#[derive(Debug, Clone)]
pub struct QEvolver<'a> {
    pub manifold: &'a ManifoldSpec,
    pub bounds: Option<CurvatureBounds>,
    pub q: Mat,
    pub exposure: f64,
    pub local_time: f64,
}

impl<'a> QEvolver<'a> {
    pub fn new(manifold: &'a ManifoldSpec, bounds: Option<CurvatureBounds>) -> Self {
        Self { manifold, bounds, q: Mat::identity(), exposure: 0.0, local_time: 0.0 }
    }
}

impl Observer for QEvolver<'_> {
    fn start(&mut self, x: &Point, u: &Frame) {
        let d = u.dim;
        self.q = eye(d);
        if self.manifold.has_boundary() && self.manifold.on_boundary(x) {
            self.q -= self.manifold.normal_projection(x, u);
        }
        self.exposure = 0.0;
        self.local_time = 0.0;
    }

    fn step(&mut self, v: &StepView<'_>) {
        self.q *= step_factor(self.manifold, v);
        self.local_time += v.dl;
        if let Some(b) = &self.bounds {
            self.exposure += bound_increment(b, v);
        }
    }
}

/// Outcome of the pathwise norm check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QBoundReport {
    /// `max_k ‖Q_{s,t_k}‖ − e^{A(t_k) − A(s)}`.
    pub margin: f64,
    pub worst_knot: usize,
    /// Tolerance at the worst knot, `1e-3·(1 + bound)`.
    pub tolerance: f64,
    /// `max ‖Q·P_U‖` over knots flagged as boundary hits (0 when none).
    pub annihilation: f64,
    pub pass: bool,
}

pub const ANNIHILATION_TOL: f64 = 1e-6;

pub fn check_q_bound(m: &ManifoldSpec, path: &PathSample, q: &DampedTransport, bounds: &CurvatureBounds) -> Result<QBoundReport> {
    bounds.validate()?;
    let a = accumulated_bound(m, path, bounds);
    let s = q.start;
    let mut report = QBoundReport { margin: f64::NEG_INFINITY, worst_knot: s, tolerance: 0.0, annihilation: 0.0, pass: true };
    for k in s..path.points.len() {
        let qk = q.at(k);
        let bound = (a[k] - a[s]).exp();
        let excess = operator_norm(qk, q.dim) - bound;
        let tol = 1e-3 * (1.0 + bound);
        if excess > report.margin {
            report.margin = excess;
            report.worst_knot = k;
            report.tolerance = tol;
        }
        if excess > tol {
            report.pass = false;
        }
        if k > s && path.hits[k - 1] {
            let p = m.normal_projection(&path.points[k], &path.frames[k]);
            report.annihilation = report.annihilation.max(operator_norm(&(qk * p), q.dim));
        }
    }
    if report.annihilation > ANNIHILATION_TOL {
        report.pass = false;
    }
    Ok(report)
}
