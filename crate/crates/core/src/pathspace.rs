//! Cylindric path functionals, their Malliavin and damped gradients, the
//! random measure `μ` built from `(K, σ)` along a path, and the energy form.

use nalgebra::SMatrix;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Ensemble, PathSample};
use crate::error::{invalid, Error, Result};
use crate::geometry::{eye, CurvatureBounds, FrameVector, ManifoldSpec, Point, Vector};
use crate::stats::McEstimate;
use crate::transport::{accumulated_bound, at_boundary, evolve_q, DampedTransport};

pub type Sym4 = SMatrix<f64, 4, 4>;

/// Smooth scalar functions of the feature coordinates of a point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureFunction {
    Constant(f64),
    /// `x_i`.
    Coordinate(usize),
    /// `c + ⟨a, x⟩`.
    Linear { a: Vector, c: f64 },
    /// `c + ⟨a, x⟩ + xᵀBx` with `B` symmetric.
    Quadratic { c: f64, a: Vector, b: Sym4 },
    /// `(x_i − c_i)·exp(−|x − c|⁴/R⁴)`: a coordinate that is linear near `c`
    /// and bounded with bounded gradient everywhere.
    Windowed { index: usize, center: Vector, radius: f64 },
}

impl FeatureFunction {
    pub fn value_at(&self, y: &Vector) -> f64 {
        match self {
            FeatureFunction::Constant(c) => *c,
            FeatureFunction::Coordinate(i) => y[*i],
            FeatureFunction::Linear { a, c } => c + a.dot(y),
            FeatureFunction::Quadratic { c, a, b } => c + a.dot(y) + y.dot(&(b * y)),
            FeatureFunction::Windowed { index, center, radius } => {
                let r = y - center;
                r[*index] * (-(r.norm_squared() / (radius * radius)).powi(2)).exp()
            }
        }
    }

    pub fn ambient_gradient(&self, y: &Vector) -> Vector {
        match self {
            FeatureFunction::Constant(_) => Vector::zeros(),
            FeatureFunction::Coordinate(i) => {
                let mut g = Vector::zeros();
                g[*i] = 1.0;
                g
            }
            FeatureFunction::Linear { a, .. } => *a,
            FeatureFunction::Quadratic { a, b, .. } => a + (b + b.transpose()) * y,
            FeatureFunction::Windowed { index, center, radius } => {
                let r = y - center;
                let r4 = radius.powi(4);
                let s = r.norm_squared();
                let w = (-(s * s) / r4).exp();
                let mut g = r * (-4.0 * s / r4 * r[*index] * w);
                g[*index] += w;
                g
            }
        }
    }

    pub fn value(&self, m: &ManifoldSpec, x: &Point) -> f64 {
        self.value_at(&m.feature(x))
    }

    /// Riemannian gradient at `x`.
    pub fn gradient(&self, m: &ManifoldSpec, x: &Point) -> Vector {
        m.feature_gradient(x, &self.ambient_gradient(&m.feature(x)))
    }

    /// `f²` when it stays in the polynomial vocabulary.
    pub fn squared(&self) -> Option<FeatureFunction> {
        let (c, a) = match self {
            FeatureFunction::Constant(c) => return Some(FeatureFunction::Constant(c * c)),
            FeatureFunction::Coordinate(i) => {
                let mut a = Vector::zeros();
                a[*i] = 1.0;
                (0.0, a)
            }
            FeatureFunction::Linear { a, c } => (*c, *a),
            _ => return None,
        };
        Some(FeatureFunction::Quadratic { c: c * c, a: a * (2.0 * c), b: a * a.transpose() })
    }

    /// `sup |f|` and `sup |∇f|` in the feature coordinates when finite and
    /// known in closed form on the unit sphere or everywhere.
    pub fn ambient_sup(&self) -> Option<(f64, f64)> {
        match self {
            FeatureFunction::Constant(c) => Some((c.abs(), 0.0)),
            FeatureFunction::Windowed { radius, .. } => {
                // |r|e^{−|r|⁴/R⁴} peaks at |r| = R·4^{−1/4}; the gradient is ≤ 1 + 4·max(u e^{−u}) = 1 + 4/e
                Some((radius * 0.25f64.powf(0.25) * (-0.25f64).exp(), 1.0 + 4.0 / std::f64::consts::E))
            }
            _ => None,
        }
    }
}

/// Smooth cutoff `ℓ` equal to 1 below `r_in`, 0 above `r_out`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub center: Point,
    pub r_in: f64,
    pub r_out: f64,
}

fn psi(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp()
    }
}

fn dpsi(u: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else {
        (-1.0 / u).exp() / (u * u)
    }
}

impl Cutoff {
    pub fn new(center: Point, r_in: f64, r_out: f64) -> Result<Self> {
        if !(0.0 < r_in && r_in < r_out) {
            return Err(invalid("cutoff", format!("need 0 < r_in < r_out, got {r_in}, {r_out}")));
        }
        Ok(Self { center, r_in, r_out })
    }

    pub fn ell(&self, s: f64) -> f64 {
        let a = psi(self.r_out - s);
        let b = psi(s - self.r_in);
        if a + b == 0.0 {
            return if s <= self.r_in { 1.0 } else { 0.0 };
        }
        a / (a + b)
    }

    pub fn ell_prime(&self, s: f64) -> f64 {
        let a = psi(self.r_out - s);
        let b = psi(s - self.r_in);
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        let da = -dpsi(self.r_out - s);
        let db = dpsi(s - self.r_in);
        (da * b - a * db) / ((a + b) * (a + b))
    }
}

/// `Φ(γ) = ℓ(max_k ρ(γ_k, x))` and its derivative data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffValue {
    pub value: f64,
    pub running_max: f64,
    pub argmax: usize,
    /// `ℓ'(ρ̃)`, zero inside `r_in`.
    pub slope: f64,
}

pub fn cutoff_value(m: &ManifoldSpec, cutoff: &Cutoff, path: &PathSample) -> CutoffValue {
    let (argmax, running_max) = path
        .points
        .iter()
        .enumerate()
        .map(|(k, p)| (k, m.distance(p, &cutoff.center)))
        .fold((0, f64::NEG_INFINITY), |acc, (k, r)| if r > acc.1 { (k, r) } else { acc });
    CutoffValue {
        value: cutoff.ell(running_max),
        running_max,
        argmax,
        slope: cutoff.ell_prime(running_max),
    }
}

/// How the slot values are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Combine {
    /// `F = Σ fᵢ(γ_{tᵢ})`.
    Sum,
    /// `F = Π fᵢ(γ_{tᵢ})`.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricFunction {
    pub times: Vec<f64>,
    pub factors: Vec<FeatureFunction>,
    pub combine: Combine,
    pub cutoff: Option<Cutoff>,
    /// Project `Ḋ_s F` off the normal when `X_s ∈ ∂M`.
    pub project_at_boundary: bool,
}

/// Slot knots and `U_{tᵢ}⁻¹∇ᵢF` of one path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SlotGradients {
    pub knots: Vec<usize>,
    pub vectors: Vec<FrameVector>,
    pub value: f64,
}

impl CylindricFunction {
    pub fn new(times: Vec<f64>, factors: Vec<FeatureFunction>, combine: Combine) -> Result<Self> {
        let f = Self { times, factors, combine, cutoff: None, project_at_boundary: false };
        f.validate()?;
        Ok(f)
    }

    /// `F(γ) = f(γ_T)`.
    pub fn terminal(horizon: f64, f: FeatureFunction) -> Self {
        Self { times: vec![horizon], factors: vec![f], combine: Combine::Sum, cutoff: None, project_at_boundary: false }
    }

    pub fn with_cutoff(mut self, cutoff: Cutoff) -> Self {
        self.cutoff = Some(cutoff);
        self
    }

    pub fn with_boundary_projection(mut self, on: bool) -> Self {
        self.project_at_boundary = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.is_empty() || self.times.len() != self.factors.len() {
            return Err(invalid("cylindric function", "one factor per time is required"));
        }
        if self.times[0] < 0.0 || self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("cylindric function", "times must be nonnegative and strictly increasing"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    fn knots(&self, path: &PathSample) -> Result<Vec<usize>> {
        let dt = path.dt();
        let t_end = path.horizon();
        self.times
            .iter()
            .map(|t| {
                if *t > t_end * (1.0 + 1e-12) {
                    return Err(Error::TimeOutOfRange { time: *t, horizon: t_end });
                }
                let k = t / dt;
                if (k - k.round()).abs() > 1e-6 {
                    return Err(invalid("times", format!("{t} is not on the path grid")));
                }
                Ok(k.round() as usize)
            })
            .collect()
    }

    fn slot_values(&self, m: &ManifoldSpec, path: &PathSample, knots: &[usize]) -> Vec<f64> {
        knots.iter().zip(&self.factors).map(|(k, f)| f.value(m, &path.points[*k])).collect()
    }

    fn combine_values(&self, v: &[f64]) -> f64 {
        match self.combine {
            Combine::Sum => v.iter().sum(),
            Combine::Product => v.iter().product(),
        }
    }

    /// `F(X_{[0,T]})`, including the cutoff factor.
    pub fn value(&self, m: &ManifoldSpec, path: &PathSample) -> Result<f64> {
        let knots = self.knots(path)?;
        let v = self.combine_values(&self.slot_values(m, path, &knots));
        Ok(match &self.cutoff {
            Some(c) => v * cutoff_value(m, c, path).value,
            None => v,
        })
    }

    /// Slot gradients in frame coordinates. With a cutoff active beyond
    /// `r_in`, `F·ℓ'(ρ̃)·∇ρ` is attached to the argmax knot.
    pub fn slot_gradients(&self, m: &ManifoldSpec, path: &PathSample) -> Result<SlotGradients> {
        let knots = self.knots(path)?;
        let vals = self.slot_values(m, path, &knots);
        let base = self.combine_values(&vals);
        let mut out = SlotGradients { knots: knots.clone(), vectors: Vec::with_capacity(knots.len() + 1), value: base };
        let phi = self.cutoff.as_ref().map(|c| (c, cutoff_value(m, c, path)));
        let scale = phi.as_ref().map_or(1.0, |(_, cv)| cv.value);
        for (i, (k, f)) in knots.iter().zip(&self.factors).enumerate() {
            let coef = match self.combine {
                Combine::Sum => 1.0,
                Combine::Product => vals.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product(),
            };
            let x = &path.points[*k];
            let g = f.gradient(m, x);
            out.vectors.push(m.frame_coords(x, &path.frames[*k], &g) * (coef * scale));
        }
        if let Some((c, cv)) = phi {
            out.value = base * cv.value;
            if cv.slope != 0.0 {
                let k = cv.argmax;
                let x = &path.points[k];
                let u = &path.frames[k];
                let h = 1e-6;
                let mut grad = FrameVector::zeros();
                for j in 0..u.dim {
                    let e = u.basis[j] * h;
                    let up = m.distance(&m.exp_map(x, &e), &c.center);
                    let down = m.distance(&m.exp_map(x, &-e), &c.center);
                    grad[j] = (up - down) / (2.0 * h);
                }
                out.knots.push(k);
                out.vectors.push(grad * (base * cv.slope));
            }
        }
        Ok(out)
    }
}

/// Whether slot knot `k` contributes at `s`: `t_k > s`, plus time-0 slots at `s = 0`.
fn active(k: usize, s: usize) -> bool {
    k > s || (s == 0 && k == 0)
}

/// `Ḋ_s F`, the sum of slot gradients after `s`.
pub fn malliavin_dot(m: &ManifoldSpec, f: &CylindricFunction, path: &PathSample, slots: &SlotGradients, s_index: usize) -> Result<FrameVector> {
    if s_index > path.n_steps() {
        return Err(Error::TimeOutOfRange { time: s_index as f64 * path.dt(), horizon: path.horizon() });
    }
    let mut v = FrameVector::zeros();
    for (k, g) in slots.knots.iter().zip(&slots.vectors) {
        if active(*k, s_index) {
            v += g;
        }
    }
    if f.project_at_boundary && m.has_boundary() && at_boundary(m, path, s_index) {
        let p = m.normal_projection(&path.points[s_index], &path.frames[s_index]);
        v = (eye(m.dim()) - p) * v;
    }
    Ok(v)
}

/// `D̃_s F = Σ_{tᵢ > s} Q_{s,tᵢ} U_{tᵢ}⁻¹∇ᵢF` with `q` evolved from `s`.
pub fn damped_dot(slots: &SlotGradients, q: &DampedTransport) -> FrameVector {
    let s = q.start;
    let mut v = FrameVector::zeros();
    for (k, g) in slots.knots.iter().zip(&slots.vectors) {
        if active(*k, s) && *k >= s {
            v += q.at(*k) * g;
        }
    }
    v
}

/// Per-path data of the random measure `μ(dr) = e^{A(r)}(K dr + σ dl)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MuProfile {
    /// `A(t_k)`.
    pub exposure: Vec<f64>,
    /// Left-point mass deposited on step `k`: `e^{A(t_k)}·ΔA_k`.
    pub density: Vec<f64>,
    /// `Σ_{j<k} density_j`.
    pub prefix: Vec<f64>,
}

impl MuProfile {
    pub fn new(m: &ManifoldSpec, path: &PathSample, bounds: &CurvatureBounds) -> Result<Self> {
        bounds.validate()?;
        let exposure = accumulated_bound(m, path, bounds);
        let n = path.n_steps();
        let mut density = Vec::with_capacity(n);
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            let mass = exposure[k].exp() * (exposure[k + 1] - exposure[k]);
            density.push(mass);
            acc += mass;
            prefix.push(acc);
        }
        Ok(Self { exposure, density, prefix })
    }

    /// `μ([t_a, t_b])` by quadrature.
    pub fn mass(&self, a: usize, b: usize) -> f64 {
        self.prefix[b] - self.prefix[a]
    }

    /// `e^{A(t_b)} − e^{A(t_a)}`.
    pub fn closed_form(&self, a: usize, b: usize) -> f64 {
        self.exposure[b].exp() - self.exposure[a].exp()
    }
}

fn knot_of(path: &PathSample, t: f64) -> Result<usize> {
    if !(0.0..=path.horizon() * (1.0 + 1e-12)).contains(&t) {
        return Err(Error::TimeOutOfRange { time: t, horizon: path.horizon() });
    }
    let k = t / path.dt();
    if (k - k.round()).abs() > 1e-6 {
        return Err(invalid("time", format!("{t} is not on the path grid")));
    }
    Ok(k.round() as usize)
}

/// `μ([a, b])` along a path.
pub fn mu_mass(m: &ManifoldSpec, path: &PathSample, bounds: &CurvatureBounds, a: f64, b: f64) -> Result<f64> {
    if b < a {
        return Err(invalid("interval", format!("[{a}, {b}] is empty")));
    }
    let (ka, kb) = (knot_of(path, a)?, knot_of(path, b)?);
    Ok(MuProfile::new(m, path, bounds)?.mass(ka, kb))
}

/// `∫_{t_s}^T |Ḋ_r F|² μ(dr)` with `Ḋ` piecewise constant between slots.
pub fn weighted_dot_integral(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    slots: &SlotGradients,
    profile: &MuProfile,
    s_index: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for k in s_index..path.n_steps() {
        let w = profile.density[k];
        if w != 0.0 {
            total += malliavin_dot(m, f, path, slots, k)?.norm_squared() * w;
        }
    }
    Ok(total)
}

/// `(1 + μ([t,T]))(|Ḋ_t F|² + ∫_t^T |Ḋ_r F|² μ(dr))` for one path.
pub fn energy_integrand(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    slots: &SlotGradients,
    profile: &MuProfile,
    t_index: usize,
) -> Result<f64> {
    let n = path.n_steps();
    let inner = malliavin_dot(m, f, path, slots, t_index)?.norm_squared()
        + weighted_dot_integral(m, f, path, slots, profile, t_index)?;
    Ok((1.0 + profile.mass(t_index, n)) * inner)
}

/// `(1 + μ([t_k,T]))^{a}(|Ḋ_k F|^q + ∫_{t_k}^T |Ḋ_r F|^q μ(dr))` at every knot
/// `k`, in one backward sweep. `a = 1, q = 2` is the energy-form integrand.
pub fn energy_profile(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    slots: &SlotGradients,
    profile: &MuProfile,
    q: f64,
    a: f64,
) -> Result<Vec<f64>> {
    let n = path.n_steps();
    let mut dots = Vec::with_capacity(n + 1);
    for k in 0..=n {
        dots.push(malliavin_dot(m, f, path, slots, k)?.norm().powf(q));
    }
    let mut out = vec![0.0; n + 1];
    let mut tail = 0.0;
    out[n] = dots[n];
    for k in (0..n).rev() {
        tail += dots[k] * profile.density[k];
        out[k] = (1.0 + profile.mass(k, n)).powf(a) * (dots[k] + tail);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyFormValue {
    pub t: f64,
    pub estimate: McEstimate,
}

/// Monte Carlo estimate of `𝔈^{K,σ}_{t,T}(F, F)`.
pub fn energy_form(
    f: &CylindricFunction,
    ens: &Ensemble,
    bounds: &CurvatureBounds,
    t: f64,
    n_paths: usize,
    workers: usize,
) -> Result<EnergyFormValue> {
    bounds.validate()?;
    let t_index = ens.config.knot(t)?;
    let m = &ens.manifold;
    let mom = ens.reduce_paths(n_paths, workers, 1, |path, _, out| {
        let slots = f.slot_gradients(m, path)?;
        let profile = MuProfile::new(m, path, bounds)?;
        out[0] = energy_integrand(m, f, path, &slots, &profile, t_index)?;
        Ok(())
    })?;
    Ok(EnergyFormValue { t, estimate: mom.component(0) })
}

/// Both sides of the pathwise bound
/// `|D̃_s F|² ≤ (1 + μ([s,T]))(|Ḋ_s F|² + ∫_s^T |Ḋ_r F|² μ(dr))`.
pub fn damped_bound_sides(
    m: &ManifoldSpec,
    f: &CylindricFunction,
    path: &PathSample,
    bounds: &CurvatureBounds,
    s_index: usize,
) -> Result<(f64, f64)> {
    let slots = f.slot_gradients(m, path)?;
    let q = evolve_q(path, m, s_index)?;
    let profile = MuProfile::new(m, path, bounds)?;
    let lhs = damped_dot(&slots, &q).norm_squared();
    let rhs = energy_integrand(m, f, path, &slots, &profile, s_index)?;
    Ok((lhs, rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{simulate, SimConfig};
    use crate::geometry::vector;

    fn sphere_path(seed: u64) -> (ManifoldSpec, PathSample) {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let p = simulate(&m, &x, &m.default_frame(&x), &SimConfig::new(0.2, 40, seed), 0).unwrap();
        (m, p)
    }

    #[test]
    fn constant_k_closed_form_mass() {
        let (m, p) = sphere_path(1);
        let k = 0.7;
        let prof = MuProfile::new(&m, &p, &CurvatureBounds::constant(k, 0.0)).unwrap();
        let n = p.n_steps();
        let exact = (k * p.horizon()).exp() - 1.0;
        assert!((prof.closed_form(0, n) - exact).abs() < 1e-12);
        // left-point sum of e^{k t_j} k Δt
        let dt = p.dt();
        let left: f64 = (0..n).map(|j| (k * j as f64 * dt).exp() * k * dt).sum();
        assert!((prof.mass(0, n) - left).abs() < 1e-12);
        assert!((prof.mass(0, n) - exact).abs() <= 2.0 * dt * k * k * (k * p.horizon()).exp());
        assert!((prof.mass(0, 10) + prof.mass(10, n) - prof.mass(0, n)).abs() < 1e-14);
        assert_eq!(mu_mass(&m, &p, &CurvatureBounds::zero(), 0.0, 0.2).unwrap(), 0.0);
        assert!(mu_mass(&m, &p, &CurvatureBounds::constant(-1.0, 0.0), 0.0, 0.2).is_err());
    }

    #[test]
    fn terminal_functional_has_constant_dot() {
        let (m, p) = sphere_path(2);
        let f = CylindricFunction::terminal(0.2, FeatureFunction::Coordinate(2));
        let slots = f.slot_gradients(&m, &p).unwrap();
        let (xt, _) = p.terminal();
        let g = FeatureFunction::Coordinate(2).gradient(&m, xt).norm();
        for s in [0, 5, 39] {
            let v = malliavin_dot(&m, &f, &p, &slots, s).unwrap();
            assert!((v.norm() - g).abs() < 1e-12);
        }
        assert_eq!(malliavin_dot(&m, &f, &p, &slots, 40).unwrap(), FrameVector::zeros());
        assert!(malliavin_dot(&m, &f, &p, &slots, 41).is_err());
    }

    #[test]
    fn two_slot_difference_at_zero() {
        let (m, p) = sphere_path(3);
        let fx = FeatureFunction::Coordinate(2);
        let f = CylindricFunction::new(
            vec![0.0, 0.2],
            vec![fx.clone(), FeatureFunction::Linear { a: vector(&[0.0, 0.0, -0.5]), c: 0.0 }],
            Combine::Sum,
        )
        .unwrap();
        let slots = f.slot_gradients(&m, &p).unwrap();
        let v = malliavin_dot(&m, &f, &p, &slots, 0).unwrap();
        let x0 = &p.points[0];
        let (xt, ut) = p.terminal();
        let expect = m.frame_coords(x0, &p.frames[0], &fx.gradient(&m, x0))
            - m.frame_coords(xt, ut, &fx.gradient(&m, xt)) * 0.5;
        assert!((v - expect).norm() < 1e-14);
        assert!((f.value(&m, &p).unwrap() - (x0.coords[2] - 0.5 * xt.coords[2])).abs() < 1e-15);
    }

    #[test]
    fn damped_dot_on_sphere_and_flat() {
        let (m, p) = sphere_path(4);
        let f = CylindricFunction::terminal(0.2, FeatureFunction::Coordinate(2));
        let slots = f.slot_gradients(&m, &p).unwrap();
        let q = evolve_q(&p, &m, 0).unwrap();
        let damped = damped_dot(&slots, &q);
        let plain = malliavin_dot(&m, &f, &p, &slots, 0).unwrap();
        let factor = (1.0 - p.dt()).powi(40);
        assert!((damped - plain * factor).norm() < 1e-12);
        assert!((factor - (-0.2f64).exp()).abs() < 2.0 * p.dt() * 0.2);

        let flat = ManifoldSpec::half_space(2);
        let x = flat.point(&[0.0, 30.0]).unwrap();
        let fp = simulate(&flat, &x, &flat.default_frame(&x), &SimConfig::new(0.2, 40, 1), 0).unwrap();
        let g = CylindricFunction::new(
            vec![0.1, 0.2],
            vec![FeatureFunction::Coordinate(0), FeatureFunction::Coordinate(1)],
            Combine::Product,
        )
        .unwrap();
        let s = g.slot_gradients(&flat, &fp).unwrap();
        let q = evolve_q(&fp, &flat, 0).unwrap();
        assert_eq!(damped_dot(&s, &q), malliavin_dot(&flat, &g, &fp, &s, 0).unwrap());
    }

    #[test]
    fn pathwise_damped_bound_holds_with_true_norms() {
        let m = ManifoldSpec::spherical_cap(std::f64::consts::FRAC_PI_3).unwrap();
        let th = std::f64::consts::FRAC_PI_3 - 0.05;
        let x = m.point(&[th.sin(), 0.0, th.cos()]).unwrap();
        let b = m.exact_bounds().unwrap();
        let b = CurvatureBounds { k: b.k.plus(1e-6), sigma: b.sigma.plus(1e-6) };
        let f = CylindricFunction::terminal(0.1, FeatureFunction::Coordinate(0));
        let ens = Ensemble::at(m.clone(), x, SimConfig::new(0.1, 50, 8)).unwrap();
        for p in ens.materialize(100).unwrap() {
            for s in [0, 20] {
                let (lhs, rhs) = damped_bound_sides(&m, &f, &p, &b, s).unwrap();
                assert!(lhs <= rhs * (1.0 + 1e-6) + 1e-15, "{lhs} > {rhs}");
            }
        }
    }

    #[test]
    fn cutoff_profile_and_values() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[0.0, 0.0, 1.0]).unwrap();
        let c = Cutoff::new(x, 0.5, 1.0).unwrap();
        assert_eq!(c.ell(0.3), 1.0);
        assert_eq!(c.ell(1.2), 0.0);
        let mid = c.ell(0.75);
        assert!((mid - 0.5).abs() < 1e-12);
        let h = 1e-6;
        assert!((c.ell_prime(0.7) - (c.ell(0.7 + h) - c.ell(0.7 - h)) / (2.0 * h)).abs() < 1e-6);
        assert_eq!(c.ell_prime(0.4), 0.0);
        assert!(Cutoff::new(x, 1.0, 0.5).is_err());

        let p = simulate(&m, &x, &m.default_frame(&x), &SimConfig::new(0.01, 20, 0), 0).unwrap();
        let cv = cutoff_value(&m, &c, &p);
        assert_eq!(cv.value, 1.0);
        assert_eq!(cv.slope, 0.0);
        let far = Cutoff::new(m.point(&[0.0, 0.0, -1.0]).unwrap(), 0.5, 1.0).unwrap();
        let f = CylindricFunction::terminal(0.01, FeatureFunction::Coordinate(2)).with_cutoff(far);
        assert_eq!(f.value(&m, &p).unwrap(), 0.0);
    }

    #[test]
    fn energy_form_reduces_to_dot_square_without_bounds() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let ens = Ensemble::at(m.clone(), x, SimConfig::new(0.2, 20, 5)).unwrap();
        let f = CylindricFunction::terminal(0.2, FeatureFunction::Coordinate(2));
        let e = energy_form(&f, &ens, &CurvatureBounds::zero(), 0.0, 200, 1).unwrap();
        let direct: f64 = ens
            .materialize(200)
            .unwrap()
            .iter()
            .map(|p| {
                let (xt, _) = p.terminal();
                FeatureFunction::Coordinate(2).gradient(&m, xt).norm_squared()
            })
            .sum::<f64>()
            / 200.0;
        assert!((e.estimate.value - direct).abs() < 1e-12);
        let e1 = energy_form(&f, &ens, &CurvatureBounds::constant(1.0, 0.0), 0.0, 200, 1).unwrap();
        let e2 = energy_form(&f, &ens, &CurvatureBounds::constant(1.0, 0.0), 0.1, 200, 1).unwrap();
        assert!(e1.estimate.value >= e2.estimate.value);
        assert!(e1.estimate.value > e.estimate.value);
    }

    #[test]
    fn energy_profile_matches_direct_integrand() {
        let m = ManifoldSpec::spherical_cap(1.0).unwrap();
        let th = 0.97f64;
        let x = m.point(&[th.sin(), 0.0, th.cos()]).unwrap();
        let p = simulate(&m, &x, &m.default_frame(&x), &SimConfig::new(0.1, 30, 2), 0).unwrap();
        let f = CylindricFunction::new(
            vec![0.04, 0.1],
            vec![FeatureFunction::Coordinate(1), FeatureFunction::Coordinate(0)],
            Combine::Product,
        )
        .unwrap();
        let b = CurvatureBounds::constant(1.0, 0.7);
        let slots = f.slot_gradients(&m, &p).unwrap();
        let prof = MuProfile::new(&m, &p, &b).unwrap();
        let e = energy_profile(&m, &f, &p, &slots, &prof, 2.0, 1.0).unwrap();
        for k in [0, 5, 12, 29, 30] {
            let direct = energy_integrand(&m, &f, &p, &slots, &prof, k).unwrap();
            assert!((e[k] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        }
        let sq = FeatureFunction::Linear { a: vector(&[1.0, 2.0, 0.0]), c: 0.5 }.squared().unwrap();
        let y = vector(&[0.3, -0.1, 0.2]);
        assert!((sq.value_at(&y) - (0.5f64 + 0.3 - 0.2).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn windowed_feature_gradient_and_bounds() {
        let f = FeatureFunction::Windowed { index: 0, center: vector(&[0.0, 2.0]), radius: 1.5 };
        let y = vector(&[0.4, 2.3]);
        let h = 1e-6;
        for i in 0..2 {
            let mut e = Vector::zeros();
            e[i] = h;
            let fd = (f.value_at(&(y + e)) - f.value_at(&(y - e))) / (2.0 * h);
            assert!((fd - f.ambient_gradient(&y)[i]).abs() < 1e-8);
        }
        let (sup_f, sup_g) = f.ambient_sup().unwrap();
        for i in 0..200 {
            let r = i as f64 * 0.02;
            let y = vector(&[r, 2.0]);
            assert!(f.value_at(&y).abs() <= sup_f + 1e-12);
            assert!(f.ambient_gradient(&y).norm() <= sup_g);
        }
        let q = FeatureFunction::Quadratic { c: 1.0, a: vector(&[0.0, 1.0]), b: Sym4::identity() };
        assert_eq!(q.value_at(&vector(&[1.0, 1.0])), 4.0);
    }
}
