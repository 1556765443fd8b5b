//! Short-time extraction of `Ric_Z` and `𝕀`, the `μ` asymptotics, the
//! exponential-moment diagnostic and the martingale isometry check.

use serde::{Deserialize, Serialize};

use super::{sphere_heat_oracle, BismutObserver, McParams, TestFunction};
use crate::diffusion::{Ensemble, Observer, StepView};
use crate::error::{invalid, Result};
use crate::geometry::{CurvatureBounds, Frame, ManifoldSpec, Point};
use crate::pathspace::FeatureFunction;
use crate::stats::{dyadic_schedule, fit_limit, LimitFit, LimitMode, McEstimate, Moments};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Which short-time expression a fit was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// `P_T|∇f|² − |∇P_T f|²`.
    Gradient,
    /// `P_T|∇f| − |∇P_T f|`.
    GradientP1,
    /// `Var f(X_T)/(2T) − |∇P_T f|²`.
    Variance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureParams {
    pub schedule: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub antithetic: bool,
}

impl CurvatureParams {
    pub fn interior(n_paths: usize, seed: u64) -> Self {
        Self { schedule: dyadic_schedule(0.08, 6), n_paths, n_steps: 64, seed, workers: 1, antithetic: true }
    }

    pub fn boundary(n_paths: usize, seed: u64) -> Self {
        Self { schedule: dyadic_schedule(0.04, 6), ..Self::interior(n_paths, seed) }
    }

    pub fn with_workers(mut self, w: usize) -> Self {
        self.workers = w.max(1);
        self
    }

    fn mc(&self, j: usize) -> McParams {
        McParams {
            n_paths: self.n_paths,
            max_dt: f64::INFINITY,
            min_steps: self.n_steps,
            seed: self.seed,
            workers: self.workers,
            antithetic: self.antithetic,
        }
        .reseeded(j as u64)
    }
}

/// Estimates at one horizon, with the raw ensemble moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonPoint {
    pub t: f64,
    pub gradient: McEstimate,
    pub gradient_p1: McEstimate,
    pub variance: McEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub probe: Point,
    /// Ambient `∇f(x)`.
    pub direction: crate::geometry::Vector,
    pub mode: LimitMode,
    /// The gradient-form extrapolation, the headline estimate.
    pub estimate: McEstimate,
    pub gradient: LimitFit,
    pub gradient_p1: LimitFit,
    pub variance: LimitFit,
    pub points: Vec<HorizonPoint>,
    /// Gradient and variance forms differ by more than 3× their combined CI.
    pub inconsistent: bool,
}

impl CurvatureReport {
    pub fn fit(&self, method: Method) -> &LimitFit {
        match method {
            Method::Gradient => &self.gradient,
            Method::GradientP1 => &self.gradient_p1,
            Method::Variance => &self.variance,
        }
    }
}

fn combined(a: &McEstimate, b: &McEstimate) -> f64 {
    (a.ci * a.ci + b.ci * b.ci).sqrt()
}

/// Per-horizon statistics vector:
/// `[|∇f(X)|², |∇f(X)|, V₁..V_d, Y, Y², Y·C]` with `V = Q U_T⁻¹∇f(X_T)` and
/// `Y = f(X_T) − C`, `C = √2⟨U₀⁻¹∇f(x), W_T⟩` a zero-mean control variate
/// whose variance `2T|∇f(x)|²` is known exactly.
fn horizon_moments(m: &ManifoldSpec, tf: &TestFunction, t: f64, mc: &McParams) -> Result<Moments> {
    let ens = Ensemble::at(m.clone(), tf.probe, mc.config(t))?;
    let d = m.dim();
    let g0 = m.frame_coords(&tf.probe, &ens.frame, &tf.direction);
    let f0 = tf.f.value(m, &tf.probe);
    ens.reduce(mc.n_paths, mc.workers, d + 5, |idx, sign, _, out| {
        let mut obs = BismutObserver::new(m, None);
        ens.observe(idx, sign, &mut obs)?;
        let e = &obs.end;
        let g = tf.f.gradient(m, &e.point);
        let gn2 = m.inner(&e.point, &g, &g);
        let v = obs.q.q * m.frame_coords(&e.point, &e.frame, &g);
        let c = std::f64::consts::SQRT_2 * g0.dot(&e.wiener);
        let y = tf.f.value(m, &e.point) - f0 - c;
        out[0] = gn2;
        out[1] = gn2.sqrt();
        out[2..2 + d].copy_from_slice(&v.as_slice()[..d]);
        out[2 + d] = y;
        out[3 + d] = y * y;
        out[4 + d] = y * c;
        Ok(())
    })
}

fn horizon_point(mom: &Moments, d: usize, t: f64, grad0_sq: f64, mode: LimitMode) -> HorizonPoint {
    let (pg2, pg1, pv) = match mode {
        LimitMode::Interior => (1.0 / (2.0 * t), 1.0 / t, 1.0 / t),
        LimitMode::Boundary => (SQRT_PI / (4.0 * t.sqrt()), SQRT_PI / (2.0 * t.sqrt()), 3.0 * SQRT_PI / (8.0 * t.sqrt())),
    };
    let v2 = |s: &[f64]| s[2..2 + d].iter().map(|v| v * v).sum::<f64>();
    let gradient = mom.estimate(|s| pg2 * (s[0] - v2(s)));
    let gradient_p1 = mom.estimate(|s| pg1 * (s[1] - v2(s).sqrt()));
    let variance = mom.estimate(|s| {
        let var_f = s[3 + d] - s[2 + d] * s[2 + d] + 2.0 * s[4 + d] + 2.0 * t * grad0_sq;
        pv * (var_f / (2.0 * t) - v2(s))
    });
    HorizonPoint { t, gradient, gradient_p1, variance }
}

fn curvature_report(m: &ManifoldSpec, tf: &TestFunction, params: &CurvatureParams, mode: LimitMode) -> Result<CurvatureReport> {
    let d = m.dim();
    let grad0_sq = m.inner(&tf.probe, &tf.direction, &tf.direction);
    let mut points = Vec::with_capacity(params.schedule.len());
    for (j, t) in params.schedule.iter().enumerate() {
        let mom = horizon_moments(m, tf, *t, &params.mc(j))?;
        points.push(horizon_point(&mom, d, *t, grad0_sq, mode));
    }
    let fit = |pick: fn(&HorizonPoint) -> McEstimate| {
        let pts: Vec<McEstimate> = points.iter().map(pick).collect();
        fit_limit(mode, &params.schedule, &pts)
    };
    let gradient = fit(|p| p.gradient)?;
    let gradient_p1 = fit(|p| p.gradient_p1)?;
    let variance = fit(|p| p.variance)?;
    let inconsistent = (gradient.intercept.value - variance.intercept.value).abs()
        > 3.0 * combined(&gradient.intercept, &variance.intercept);
    Ok(CurvatureReport {
        probe: tf.probe,
        direction: tf.direction,
        mode,
        estimate: gradient.intercept,
        gradient,
        gradient_p1,
        variance,
        points,
        inconsistent,
    })
}

/// `Ric_Z(∇f, ∇f)(x)` at an interior probe.
pub fn ricci_estimate(m: &ManifoldSpec, tf: &TestFunction, params: &CurvatureParams) -> Result<CurvatureReport> {
    if tf.boundary {
        return Err(invalid("probe", "Ricci extraction needs an interior probe"));
    }
    curvature_report(m, tf, params, LimitMode::Interior)
}

/// `𝕀(∇f, ∇f)(x)` at a boundary probe with `∇f` tangent to ∂M.
pub fn second_form_estimate(m: &ManifoldSpec, tf: &TestFunction, params: &CurvatureParams) -> Result<CurvatureReport> {
    if !tf.boundary {
        return Err(invalid("probe", "second-form extraction needs a boundary probe"));
    }
    curvature_report(m, tf, params, LimitMode::Boundary)
}

/// Fits of `𝔼μ([0,T])/s(T)` and `(𝔼μ([0,T]))²/s(T)` with `s(T) = T` in
/// interior mode or `√T` in boundary mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuLimits {
    pub mode: LimitMode,
    pub first: LimitFit,
    pub second: LimitFit,
}

/// Streams `A(t)` and the left-point `μ` mass.
struct MuObserver {
    bounds: CurvatureBounds,
    exposure: f64,
    mass: f64,
}

impl Observer for MuObserver {
    fn start(&mut self, _: &Point, _: &Frame) {
        self.exposure = 0.0;
        self.mass = 0.0;
    }
    fn step(&mut self, v: &StepView<'_>) {
        let da = crate::transport::bound_increment(&self.bounds, v);
        self.mass += self.exposure.exp() * da;
        self.exposure += da;
    }
}

pub fn mu_limits(
    m: &ManifoldSpec,
    x: &Point,
    bounds: &CurvatureBounds,
    mode: LimitMode,
    params: &CurvatureParams,
) -> Result<MuLimits> {
    bounds.validate()?;
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (j, t) in params.schedule.iter().enumerate() {
        let mc = params.mc(j);
        let ens = Ensemble::at(m.clone(), *x, mc.config(*t))?;
        let mom = ens.reduce(mc.n_paths, mc.workers, 1, |idx, sign, _, out| {
            let mut obs = MuObserver { bounds: *bounds, exposure: 0.0, mass: 0.0 };
            ens.observe(idx, sign, &mut obs)?;
            out[0] = obs.mass;
            Ok(())
        })?;
        let s = mode.regressor(*t);
        first.push(mom.estimate(|v| v[0] / s));
        second.push(mom.estimate(|v| v[0] * v[0] / s));
    }
    Ok(MuLimits {
        mode,
        first: fit_limit(mode, &params.schedule, &first)?,
        second: fit_limit(mode, &params.schedule, &second)?,
    })
}

/// Boundary-start `μ` limits: `𝔼μ/√T → 2σ(x)/√π` and `(𝔼μ)²/√T → 0`.
pub fn mu_sqrt_limits(m: &ManifoldSpec, x: &Point, bounds: &CurvatureBounds, params: &CurvatureParams) -> Result<MuLimits> {
    if !(m.has_boundary() && m.on_boundary(x)) {
        return Err(invalid("probe", "the √T limits need a boundary start"));
    }
    mu_limits(m, x, bounds, LimitMode::Boundary, params)
}

/// Sample mean of `exp((2+ε)A_T)`, the integrability condition behind the
/// inequalities, with a heavy-tail flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialMoment {
    pub epsilon: f64,
    pub mean: McEstimate,
    pub max: f64,
    /// Relative CI above 10% or a single sample above 1% of the total.
    pub heavy_tail: bool,
}

pub fn exponential_moment(ens: &Ensemble, bounds: &CurvatureBounds, epsilon: f64, n_paths: usize, workers: usize) -> Result<ExponentialMoment> {
    bounds.validate()?;
    let mom = ens.reduce(n_paths, workers, 1, |idx, sign, _, out| {
        let mut obs = MuObserver { bounds: *bounds, exposure: 0.0, mass: 0.0 };
        ens.observe(idx, sign, &mut obs)?;
        out[0] = ((2.0 + epsilon) * obs.exposure).exp();
        Ok(())
    })?;
    let mean = mom.component(0);
    let max = mom.max[0];
    let heavy_tail = mean.ci > 0.1 * mean.value || max > 0.01 * mean.value * mom.n as f64;
    Ok(ExponentialMoment { epsilon, mean, max, heavy_tail })
}

/// Both sides of `𝔼[(𝔼(f(X_T)|ℱ_ε))²] − (P_T f)² = 2∫_0^ε 𝔼|∇P_{T−s}f(X_s)|² ds`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsometryReport {
    pub epsilon: f64,
    pub horizon: f64,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// `lhs − rhs` from the joint per-path statistics.
    pub difference: McEstimate,
    pub holds: bool,
}

/// Martingale isometry on a sphere, where `P_s f` is analytic.
pub fn martingale_isometry(
    m: &ManifoldSpec,
    x: &Point,
    f: &FeatureFunction,
    horizon: f64,
    epsilon: f64,
    params: &McParams,
) -> Result<IsometryReport> {
    if !(0.0 < epsilon && epsilon <= horizon) {
        return Err(invalid("epsilon", "must lie in (0, T]"));
    }
    let semigroup = |s: f64| sphere_heat_oracle(m, f, s).ok_or_else(|| invalid("function", "needs an analytic semigroup"));
    let p_t = semigroup(horizon)?.value(m, x);
    let cfg = params.config(epsilon);
    let ens = Ensemble::at(m.clone(), *x, cfg)?;
    let dt = cfg.dt();
    let grads: Vec<FeatureFunction> = (0..=cfg.n_steps).map(|k| semigroup(horizon - k as f64 * dt)).collect::<Result<_>>()?;
    let rhs_first = m.norm(x, &grads[0].gradient(m, x)).powi(2) * dt;
    struct Iso<'a> {
        m: &'a ManifoldSpec,
        grads: &'a [FeatureFunction],
        integral: f64,
        end: Point,
    }
    impl Observer for Iso<'_> {
        fn start(&mut self, x: &Point, _: &Frame) {
            self.integral = 0.0;
            self.end = *x;
        }
        fn step(&mut self, v: &StepView<'_>) {
            let g = self.grads[v.index + 1].gradient(self.m, v.to);
            let w = if v.index + 1 == self.grads.len() - 1 { 1.0 } else { 2.0 };
            self.integral += w * self.m.inner(v.to, &g, &g) * v.dt;
            self.end = *v.to;
        }
    }
    let last = cfg.n_steps;
    let mom = ens.reduce(params.n_paths, params.workers, 2, |idx, sign, _, out| {
        let mut obs = Iso { m, grads: &grads, integral: 0.0, end: *x };
        ens.observe(idx, sign, &mut obs)?;
        let cond = grads[last].value(m, &obs.end);
        out[0] = cond * cond;
        // trapezoid: ∫ ≈ Δt(g₀/2 + g₁ + … + g_{n−1} + g_n/2), times 2
        out[1] = rhs_first + obs.integral;
        Ok(())
    })?;
    let lhs = mom.estimate(|s| s[0] - p_t * p_t);
    let rhs = mom.component(1);
    let difference = mom.estimate(|s| s[0] - p_t * p_t - s[1]);
    let holds = (lhs.value - rhs.value).abs() <= combined(&lhs, &rhs);
    Ok(IsometryReport { epsilon, horizon, lhs, rhs, difference, holds })
}
