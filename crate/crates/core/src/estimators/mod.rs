//! Monte Carlo estimators of semigroup quantities: `P_T f`, `∇P_T f` by the
//! damped-transport formula and by coupled finite differences, conditional
//! expectations, and short-time curvature extraction.

mod curvature;

pub use curvature::*;

use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_observed, Ensemble, Increments, Observer, PathSample, SimConfig, StepView, Terminal};
use crate::error::{invalid, Error, Result};
use crate::geometry::{CurvatureBounds, Frame, FrameVector, ManifoldKind, ManifoldSpec, Mat, Point, Vector};
use crate::pathspace::{Combine, CylindricFunction, FeatureFunction, Sym4};
use crate::rng::{child_seed, mix64, path_seed, Stream};
use crate::stats::McEstimate;
use crate::transport::QEvolver;

/// Tolerance on the certified properties of a test function.
pub const CERT_TOL: f64 = 1e-8;
/// Cap on `N_outer·N_inner` for nested simulation.
pub const NESTED_BUDGET: usize = 10_000_000;
/// Inner sample count of nested conditional expectations.
pub const N_INNER: usize = 64;

/// Sampling parameters shared by the estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_paths: usize,
    /// Largest step; the step count is `max(min_steps, ⌈T/max_dt⌉)`.
    pub max_dt: f64,
    pub min_steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub antithetic: bool,
}

impl McParams {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, max_dt: 5e-3, min_steps: 20, seed, workers: 1, antithetic: false }
    }

    pub fn with_workers(mut self, w: usize) -> Self {
        self.workers = w.max(1);
        self
    }

    pub fn with_steps(mut self, max_dt: f64, min_steps: usize) -> Self {
        self.max_dt = max_dt;
        self.min_steps = min_steps;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn steps_for(&self, t: f64) -> usize {
        ((t / self.max_dt).ceil() as usize).max(self.min_steps).max(1)
    }

    pub fn config(&self, t: f64) -> SimConfig {
        SimConfig::new(t, self.steps_for(t), self.seed).with_antithetic(self.antithetic)
    }

    /// Same parameters under an independent seed derived from `salt`.
    pub fn reseeded(&self, salt: u64) -> Self {
        Self { seed: mix64(self.seed ^ mix64(salt)), ..*self }
    }
}

/// A test function certified at a probe point: unit gradient, vanishing
/// Hessian, and for boundary probes a gradient tangent to ∂M.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub f: FeatureFunction,
    pub probe: Point,
    pub boundary: bool,
    /// Ambient representation of `∇f(x)`.
    pub direction: Vector,
}

/// Ambient Hessian by central differences of the exact gradient.
fn ambient_hessian(f: &FeatureFunction, y: &Vector) -> Sym4 {
    let h = 1e-5;
    let mut out = Sym4::zeros();
    for j in 0..4 {
        let mut e = Vector::zeros();
        e[j] = h;
        let col = (f.ambient_gradient(&(y + e)) - f.ambient_gradient(&(y - e))) / (2.0 * h);
        out.set_column(j, &col);
    }
    (out + out.transpose()) * 0.5
}

/// `Hess f` at `x` in the default frame.
pub fn riemannian_hessian(m: &ManifoldSpec, f: &FeatureFunction, x: &Point) -> Result<Mat> {
    let frame = m.default_frame(x);
    let y = m.feature(x);
    let d2 = ambient_hessian(f, &y);
    let radial = match m.kind {
        ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. } => f.ambient_gradient(&y).dot(&x.coords),
        ManifoldKind::HalfSpace { .. } => 0.0,
        ManifoldKind::ConformalDisk(_) => return Ok(geodesic_hessian(m, f, x, &frame)),
    };
    let mut h = Mat::zeros();
    for i in 0..frame.dim {
        for j in 0..frame.dim {
            let (a, b) = (frame.basis[i], frame.basis[j]);
            h[(i, j)] = a.dot(&(d2 * b)) - radial * a.dot(&b);
        }
    }
    Ok(h)
}

/// `Hess f(a, b)` from fourth-order differences of `f` along geodesics,
/// with polarization for the off-diagonal entries.
fn geodesic_hessian(m: &ManifoldSpec, f: &FeatureFunction, x: &Point, frame: &Frame) -> Mat {
    const H: f64 = 1e-2;
    let second = |v: &Vector| {
        let at = |t: f64| f.value(m, &m.exp_map(x, &(v * t)));
        (-at(2.0 * H) + 16.0 * at(H) - 30.0 * at(0.0) + 16.0 * at(-H) - at(-2.0 * H)) / (12.0 * H * H)
    };
    let mut h = Mat::zeros();
    for i in 0..frame.dim {
        for j in i..frame.dim {
            let (a, b) = (frame.basis[i], frame.basis[j]);
            h[(i, j)] = if i == j { second(&a) } else { (second(&(a + b)) - second(&(a - b))) / 4.0 };
            h[(j, i)] = h[(i, j)];
        }
    }
    h
}

impl TestFunction {
    pub fn certify(m: &ManifoldSpec, f: FeatureFunction, probe: Point) -> Result<Self> {
        m.check_point(&probe)?;
        let g = f.gradient(m, &probe);
        let norm = m.norm(&probe, &g);
        if (norm - 1.0).abs() > CERT_TOL {
            return Err(Error::Certification(format!("|∇f| = {norm} at the probe")));
        }
        let hess = riemannian_hessian(m, &f, &probe)?;
        let hn = hess.abs().max();
        if hn > CERT_TOL {
            return Err(Error::Certification(format!("Hessian entry {hn:.3e} at the probe")));
        }
        let boundary = m.has_boundary() && m.on_boundary(&probe);
        if boundary {
            let n = m.boundary_data(&probe).normal.expect("boundary normal");
            let gn = m.inner(&probe, &g, &n);
            if gn.abs() > CERT_TOL {
                return Err(Error::Certification(format!("⟨∇f, N⟩ = {gn:.3e} at a boundary probe")));
            }
        }
        Ok(Self { f, probe, boundary, direction: g })
    }

    /// The `k`-th ambient coordinate, certified where it vanishes on a sphere.
    pub fn coordinate(m: &ManifoldSpec, probe: Point, k: usize) -> Result<Self> {
        Self::certify(m, FeatureFunction::Coordinate(k), probe)
    }

    /// `(x_k − x_k(probe))` under a wide quartic window centred at the probe.
    pub fn windowed(m: &ManifoldSpec, probe: Point, k: usize, radius: f64) -> Result<Self> {
        Self::certify(m, FeatureFunction::Windowed { index: k, center: probe.coords, radius }, probe)
    }
}

/// `P_s f` on `S^d` for `f` a polynomial of degree ≤ 2 in the ambient
/// coordinates, from the spherical-harmonic decomposition.
pub fn sphere_heat_oracle(m: &ManifoldSpec, f: &FeatureFunction, s: f64) -> Option<FeatureFunction> {
    let d = match m.kind {
        ManifoldKind::Sphere { dim } if m.drift == crate::geometry::Drift::None => dim,
        _ => return None,
    };
    let n = d + 1;
    let (c, a, b) = match f {
        FeatureFunction::Constant(c) => (*c, Vector::zeros(), Sym4::zeros()),
        FeatureFunction::Coordinate(i) => {
            let mut a = Vector::zeros();
            a[*i] = 1.0;
            (0.0, a, Sym4::zeros())
        }
        FeatureFunction::Linear { a, c } => (*c, *a, Sym4::zeros()),
        FeatureFunction::Quadratic { c, a, b } => (*c, *a, *b),
        FeatureFunction::Windowed { .. } => return None,
    };
    let b = (b + b.transpose()) * 0.5;
    let tr: f64 = (0..n).map(|i| b[(i, i)]).sum();
    let mut b0 = b;
    for i in 0..n {
        b0[(i, i)] -= tr / n as f64;
    }
    Some(FeatureFunction::Quadratic {
        c: c + tr / n as f64,
        a: a * (-(d as f64) * s).exp(),
        b: b0 * (-2.0 * n as f64 * s).exp(),
    })
}

/// Per-path terminal data with the streamed damped transport.
struct BismutObserver<'a> {
    q: QEvolver<'a>,
    end: Terminal,
}

impl<'a> BismutObserver<'a> {
    fn new(m: &'a ManifoldSpec, bounds: Option<CurvatureBounds>) -> Self {
        Self { q: QEvolver::new(m, bounds), end: Terminal::default() }
    }
}

impl Observer for BismutObserver<'_> {
    fn start(&mut self, x: &Point, u: &Frame) {
        self.q.start(x, u);
        self.end.start(x, u);
    }
    fn step(&mut self, v: &StepView<'_>) {
        self.q.step(v);
        self.end.step(v);
    }
}

fn ensemble(m: &ManifoldSpec, x: &Point, cfg: SimConfig) -> Result<Ensemble> {
    Ensemble::at(m.clone(), *x, cfg)
}

/// `P_T f(x)`.
pub fn pt_f(m: &ManifoldSpec, x: &Point, f: &FeatureFunction, t: f64, params: &McParams) -> Result<McEstimate> {
    if t == 0.0 {
        m.check_point(x)?;
        return Ok(McEstimate::exact(f.value(m, x)));
    }
    let ens = ensemble(m, x, params.config(t))?;
    let mom = ens.reduce(params.n_paths, params.workers, 1, |idx, sign, _, out| {
        let mut end = Terminal::default();
        ens.observe(idx, sign, &mut end)?;
        out[0] = f.value(m, &end.point);
        Ok(())
    })?;
    Ok(mom.component(0))
}

/// A gradient estimate in the frame at the start point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub frame: Frame,
    pub components: Vec<McEstimate>,
    pub norm: McEstimate,
}

impl GradientEstimate {
    pub fn vector(&self) -> FrameVector {
        let mut v = FrameVector::zeros();
        for (i, c) in self.components.iter().enumerate() {
            v[i] = c.value;
        }
        v
    }

    /// Ambient representation `U₀·v`.
    pub fn ambient(&self) -> Vector {
        self.frame.apply(&self.vector())
    }
}

fn gradient_from(frame: Frame, mom: &crate::stats::Moments, d: usize) -> GradientEstimate {
    GradientEstimate {
        frame,
        components: (0..d).map(|i| mom.component(i)).collect(),
        norm: mom.estimate(|m| m[..d].iter().map(|v| v * v).sum::<f64>().sqrt()),
    }
}

/// `∇P_T f(x) = U₀ 𝔼[Q_{0,T} U_T⁻¹ ∇f(X_T)]`.
pub fn grad_pt_f_bismut(m: &ManifoldSpec, x: &Point, f: &FeatureFunction, t: f64, params: &McParams) -> Result<GradientEstimate> {
    let d = m.dim();
    let frame = m.default_frame(x);
    if t == 0.0 {
        let g = m.frame_coords(x, &frame, &f.gradient(m, x));
        let components: Vec<McEstimate> = (0..d).map(|i| McEstimate::exact(g[i])).collect();
        return Ok(GradientEstimate { frame, components, norm: McEstimate::exact(g.norm()) });
    }
    let ens = ensemble(m, x, params.config(t))?;
    let mom = ens.reduce(params.n_paths, params.workers, d, |idx, sign, _, out| {
        let mut obs = BismutObserver::new(m, None);
        ens.observe(idx, sign, &mut obs)?;
        let e = &obs.end;
        let v = obs.q.q * m.frame_coords(&e.point, &e.frame, &f.gradient(m, &e.point));
        out.copy_from_slice(&v.as_slice()[..d]);
        Ok(())
    })?;
    Ok(gradient_from(frame, &mom, d))
}

/// Central differences of `P_T f` along the geodesics `exp_x(±h eᵢ)`, with
/// both ends driven by the same increments.
pub fn grad_pt_f_fd(m: &ManifoldSpec, x: &Point, f: &FeatureFunction, t: f64, h: f64, params: &McParams) -> Result<GradientEstimate> {
    if !(1e-4..=1e-2).contains(&h) {
        return Err(invalid("h", format!("{h} is outside [1e-4, 1e-2]")));
    }
    let d = m.dim();
    let frame = m.default_frame(x);
    let mut ends = Vec::with_capacity(d);
    for i in 0..d {
        let mut pair = Vec::with_capacity(2);
        for s in [1.0, -1.0] {
            let y = m.exp_map(x, &(frame.basis[i] * (s * h)));
            if m.has_boundary() && m.boundary_data(&y).distance < 0.0 {
                return Err(invalid("probe", "finite-difference stencil leaves the manifold"));
            }
            let u = m.parallel_transport(x, &y, &frame)?;
            pair.push((y, u));
        }
        ends.push(pair);
    }
    let cfg = params.config(t);
    cfg.validate()?;
    let ens = ensemble(m, x, cfg)?;
    let mom = ens.reduce(params.n_paths, params.workers, d, |idx, sign, _, out| {
        let seed = path_seed(cfg.master_seed, idx);
        for i in 0..d {
            let mut vals = [0.0; 2];
            for (j, (y, u)) in ends[i].iter().enumerate() {
                let mut end = Terminal::default();
                let incs = Increments::Stream { stream: Stream::from_seed(seed), sign };
                simulate_observed(m, y, u, &cfg, incs, &mut end)?;
                vals[j] = f.value(m, &end.point);
            }
            out[i] = (vals[0] - vals[1]) / (2.0 * h);
        }
        Ok(())
    })?;
    Ok(gradient_from(frame, &mom, d))
}

/// `𝔼(F | ℱ_t)` along one path, with its own sampling variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalValue {
    pub value: f64,
    /// Variance of `value` as an estimator (0 for analytic values).
    pub variance: f64,
    pub analytic: bool,
}

/// Conditional expectation of `F` given the path up to knot `t_index`.
/// Slots at or before `t` are read from the path; the rest are averaged
/// over `n_inner` continuations from `(X_t, U_t)`, or taken from the sphere
/// heat oracle when a single slot remains.
pub fn conditional_expectation(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    t_index: usize,
    n_inner: usize,
) -> Result<ConditionalValue> {
    conditional_moment(m, f, path, t_index, n_inner, 1)
}

/// `𝔼(F^power | ℱ_t)` for `power ∈ {1, 2}`.
pub fn conditional_moment(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    t_index: usize,
    n_inner: usize,
    power: i32,
) -> Result<ConditionalValue> {
    if f.cutoff.is_some() {
        return Err(invalid("cylindric function", "conditional expectations of truncated functions are not supported"));
    }
    if !(1..=2).contains(&power) {
        return Err(invalid("power", "only first and second moments are supported"));
    }
    if t_index > path.n_steps() {
        return Err(Error::TimeOutOfRange { time: t_index as f64 * path.dt(), horizon: path.horizon() });
    }
    let dt = path.dt();
    let t = t_index as f64 * dt;
    let knots: Vec<usize> = f.times.iter().map(|s| (s / dt).round() as usize).collect();
    let split = knots.iter().position(|k| *k > t_index).unwrap_or(knots.len());
    let known: Vec<f64> = (0..split).map(|i| f.factors[i].value(m, &path.points[knots[i]])).collect();
    let sum = f.combine == Combine::Sum;
    let known_part = if sum { known.iter().sum::<f64>() } else { known.iter().product::<f64>() };
    let full = |rest: f64| if sum { known_part + rest } else { known_part * rest };
    if split == knots.len() {
        let v = full(if sum { 0.0 } else { 1.0 });
        return Ok(ConditionalValue { value: v.powi(power), variance: 0.0, analytic: true });
    }
    let xt = &path.points[t_index];
    if split + 1 == knots.len() {
        let s = f.times[split] - t;
        let g = &f.factors[split];
        let first = sphere_heat_oracle(m, g, s).map(|p| p.value(m, xt));
        let second = g.squared().and_then(|g2| sphere_heat_oracle(m, &g2, s)).map(|p| p.value(m, xt));
        let value = match (power, first, second) {
            (1, Some(p1), _) => Some(full(p1)),
            (2, Some(p1), Some(p2)) if sum => Some(known_part * known_part + 2.0 * known_part * p1 + p2),
            (2, _, Some(p2)) if !sum => Some(known_part * known_part * p2),
            _ => None,
        };
        if let Some(value) = value {
            return Ok(ConditionalValue { value, variance: 0.0, analytic: true });
        }
    }
    if n_inner < 2 {
        return Err(invalid("n_inner", "at least two continuations are required"));
    }
    let remaining = path.n_steps() - t_index;
    let cfg = SimConfig::new(remaining as f64 * dt, remaining, 0);
    let mut sample = PathSample::default();
    let (mut acc, mut acc2) = (0.0, 0.0);
    for r in 0..n_inner as u64 {
        let stream = Stream::from_seed(child_seed(path.path_seed, t_index as u64, r));
        simulate_observed(m, xt, &path.frames[t_index], &cfg, Increments::Stream { stream, sign: 1.0 }, &mut sample)?;
        let vals = (split..knots.len()).map(|i| f.factors[i].value(m, &sample.points[knots[i] - t_index]));
        let rest = if sum { vals.sum::<f64>() } else { vals.product::<f64>() };
        let v = full(rest).powi(power);
        acc += v;
        acc2 += v * v;
    }
    let n = n_inner as f64;
    let mean = acc / n;
    let var = ((acc2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(ConditionalValue { value: mean, variance: var / n, analytic: false })
}

/// Fails when a nested computation would exceed [`NESTED_BUDGET`].
pub fn check_nested_budget(n_outer: usize, n_inner: usize) -> Result<()> {
    if n_outer.saturating_mul(n_inner) > NESTED_BUDGET {
        return Err(Error::NestedBudget(n_outer.saturating_mul(n_inner)));
    }
    Ok(())
}

/// `∇_x 𝔼F(X^x_{[0,T]})` by coupled central differences along `exp_x(±h eᵢ)`.
pub fn grad_expectation_fd(m: &ManifoldSpec, x: &Point, f: &CylindricFunction, h: f64, params: &McParams) -> Result<GradientEstimate> {
    if !(1e-4..=1e-2).contains(&h) {
        return Err(invalid("h", format!("{h} is outside [1e-4, 1e-2]")));
    }
    let d = m.dim();
    let frame = m.default_frame(x);
    let mut ends = Vec::with_capacity(2 * d);
    for i in 0..d {
        for s in [1.0, -1.0] {
            let y = m.exp_map(x, &(frame.basis[i] * (s * h)));
            if m.has_boundary() && m.boundary_data(&y).distance < 0.0 {
                return Err(invalid("probe", "finite-difference stencil leaves the manifold"));
            }
            ends.push((y, m.parallel_transport(x, &y, &frame)?));
        }
    }
    let cfg = params.config(f.horizon());
    let ens = ensemble(m, x, cfg)?;
    let mom = ens.reduce(params.n_paths, params.workers, d, |idx, sign, scratch, out| {
        let seed = path_seed(cfg.master_seed, idx);
        for i in 0..d {
            let mut vals = [0.0; 2];
            for j in 0..2 {
                let (y, u) = &ends[2 * i + j];
                let incs = Increments::Stream { stream: Stream::from_seed(seed), sign };
                simulate_observed(m, y, u, &cfg, incs, &mut scratch.aux)?;
                vals[j] = f.value(m, &scratch.aux)?;
            }
            out[i] = (vals[0] - vals[1]) / (2.0 * h);
        }
        Ok(())
    })?;
    Ok(gradient_from(frame, &mom, d))
}
