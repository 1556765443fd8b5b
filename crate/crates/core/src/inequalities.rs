//! Numerical checks of the gradient, path-space gradient, log-Sobolev and
//! Poincaré inequalities driven by `(K, σ)`. Each check evaluates both sides
//! on one ensemble and reports the signed margin `rhs − lhs` with a joint
//! delta-method confidence interval.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diffusion::{Ensemble, PathSample, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::estimators::{
    check_nested_budget, conditional_moment, grad_expectation_fd, grad_pt_f_fd, sphere_heat_oracle, McParams, N_INNER,
};
use crate::geometry::{CurvatureBounds, FrameVector, ManifoldSpec, Point};
use crate::pathspace::{
    cutoff_value, damped_dot, energy_profile, Combine, CylindricFunction, FeatureFunction, MuProfile,
};
use crate::stats::{McEstimate, Moments};
use crate::transport::evolve_q;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// PASS when `margin ≥ −2·ci − band`; FAIL when the margin is below that and
/// also more than `3·ci + band` from zero.
pub fn verdict(margin: &McEstimate, band: f64) -> Verdict {
    if margin.value >= -2.0 * margin.ci - band {
        Verdict::Pass
    } else if margin.value.abs() > 3.0 * margin.ci + band {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub name: String,
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    /// `rhs − lhs`, CI from the joint per-path statistics.
    pub margin: McEstimate,
    pub verdict: Verdict,
    /// Allowance for effects the estimate does not resolve (truncation).
    pub correction: f64,
    pub params: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl InequalityReport {
    fn new(name: &str, mom: &Moments, lhs: impl Fn(&[f64]) -> f64 + Copy, rhs: impl Fn(&[f64]) -> f64 + Copy) -> Self {
        let margin = mom.estimate(|s| rhs(s) - lhs(s));
        Self {
            name: name.to_string(),
            lhs: mom.estimate(lhs),
            rhs: mom.estimate(rhs),
            verdict: verdict(&margin, 0.0),
            margin,
            correction: 0.0,
            params: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn param(mut self, key: &str, value: impl std::fmt::Display) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    fn with_band(mut self, band: f64) -> Self {
        self.correction = band;
        self.verdict = verdict(&self.margin, band);
        self
    }
}

/// Sampling parameters of the checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckParams {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub antithetic: bool,
    pub n_inner: usize,
    /// Subtract the driving-noise control variate in conditional variances.
    pub control_variate: bool,
    /// Re-derive gradient sides by coupled finite differences.
    pub cross_check: bool,
}

impl CheckParams {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        Self {
            n_paths,
            n_steps,
            seed,
            workers: 1,
            antithetic: false,
            n_inner: N_INNER,
            control_variate: true,
            cross_check: false,
        }
    }

    pub fn with_workers(mut self, w: usize) -> Self {
        self.workers = w.max(1);
        self
    }

    fn config(&self, horizon: f64) -> SimConfig {
        SimConfig::new(horizon, self.n_steps, self.seed).with_antithetic(self.antithetic)
    }

    fn mc(&self, horizon: f64, salt: u64) -> McParams {
        McParams {
            n_paths: self.n_paths,
            max_dt: horizon / self.n_steps as f64,
            min_steps: self.n_steps,
            seed: self.seed,
            workers: self.workers,
            antithetic: self.antithetic,
        }
        .reseeded(salt)
    }
}

fn ensemble(m: &ManifoldSpec, x: &Point, horizon: f64, params: &CheckParams) -> Result<Ensemble> {
    Ensemble::at(m.clone(), *x, params.config(horizon))
}

fn check_exponent(name: &'static str, v: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&v) {
        return Err(invalid(name, format!("{v} is outside [1, 2]")));
    }
    Ok(())
}

fn norm_of(s: &[f64]) -> f64 {
    s.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn frame_vec(s: &[f64]) -> FrameVector {
    let mut v = FrameVector::zeros();
    v.as_mut_slice()[..s.len()].copy_from_slice(s);
    v
}

/// Relative agreement within `max(2·combined CI, 5%)`.
fn agreement_note(label: &str, a: &FrameVector, a_ci: f64, b: &FrameVector, b_ci: f64) -> String {
    let diff = (a - b).norm();
    let tol = (2.0 * (a_ci * a_ci + b_ci * b_ci).sqrt()).max(0.05 * a.norm().max(b.norm()));
    let ok = if diff <= tol { "agrees" } else { "DISAGREES" };
    format!("{label}: finite-difference gradient {ok} (|Δ| = {diff:.3e}, tolerance {tol:.3e})")
}

/// `|∇P_T f|^p(x) ≤ 𝔼[(1 + μ([0,T]))^p |∇f|^p(X_T)]`.
pub fn check_gradient_ineq_1(
    m: &ManifoldSpec,
    x: &Point,
    f: &FeatureFunction,
    horizon: f64,
    p: f64,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    check_exponent("p", p)?;
    bounds.validate()?;
    let ens = ensemble(m, x, horizon, params)?;
    let d = m.dim();
    let mom = ens.reduce_paths(params.n_paths, params.workers, d + 1, |path, _, out| {
        let (xt, ut) = path.terminal();
        let g = m.frame_coords(xt, ut, &f.gradient(m, xt));
        let q = evolve_q(path, m, 0)?;
        let v = q.terminal() * g;
        out[..d].copy_from_slice(&v.as_slice()[..d]);
        let mu = MuProfile::new(m, path, bounds)?.mass(0, path.n_steps());
        out[d] = (1.0 + mu).powf(p) * g.norm().powf(p);
        Ok(())
    })?;
    let mut r = InequalityReport::new("gradient-1", &mom, |s| norm_of(&s[..d]).powf(p), |s| s[d])
        .param("p", p)
        .param("T", horizon)
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma));
    if params.cross_check {
        let fd = grad_pt_f_fd(m, x, f, horizon, 1e-3, &params.mc(horizon, 1))?;
        let bis = frame_vec(&mom.mean[..d]);
        let bis_ci = mom.estimate(|s| norm_of(&s[..d])).ci;
        r.notes.push(agreement_note("∇P_T f", &bis, bis_ci, &fd.vector(), fd.norm.ci));
    }
    Ok(r)
}

/// `|∇f(x) − ½∇P_T f(x)|^q ≤ 𝔼[(1+μ)^{q−1}(|∇f(x) − ½U₀U_T⁻¹∇f(X_T)|^q + μ 2^{−q}|∇f(X_T)|^q)]`.
pub fn check_gradient_ineq_2(
    m: &ManifoldSpec,
    x: &Point,
    f: &FeatureFunction,
    horizon: f64,
    q: f64,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    check_exponent("q", q)?;
    bounds.validate()?;
    let ens = ensemble(m, x, horizon, params)?;
    let d = m.dim();
    let g0 = m.frame_coords(x, &ens.frame, &f.gradient(m, x));
    let mom = ens.reduce_paths(params.n_paths, params.workers, d + 1, |path, _, out| {
        let (xt, ut) = path.terminal();
        let g = m.frame_coords(xt, ut, &f.gradient(m, xt));
        let q_t = evolve_q(path, m, 0)?;
        let v = q_t.terminal() * g;
        out[..d].copy_from_slice(&v.as_slice()[..d]);
        let mu = MuProfile::new(m, path, bounds)?.mass(0, path.n_steps());
        out[d] = (1.0 + mu).powf(q - 1.0) * ((g0 - g * 0.5).norm().powf(q) + mu * 2f64.powf(-q) * g.norm().powf(q));
        Ok(())
    })?;
    let lhs = move |s: &[f64]| (g0 - frame_vec(&s[..d]) * 0.5).norm().powf(q);
    Ok(InequalityReport::new("gradient-2", &mom, lhs, |s| s[d])
        .param("q", q)
        .param("T", horizon)
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma)))
}

/// `|∇_x 𝔼F|^q ≤ 𝔼[(1+μ([0,T]))^{q−1}(|Ḋ_0F|^q + ∫_0^T |Ḋ_sF|^q μ(ds))]`,
/// the left side from `𝔼[D̃_0 F]`.
pub fn check_pathspace_gradient(
    m: &ManifoldSpec,
    x: &Point,
    f: &CylindricFunction,
    q: f64,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    check_exponent("q", q)?;
    bounds.validate()?;
    f.validate()?;
    if f.times.len() > 3 {
        return Err(invalid("cylindric function", "at most three time slots are supported"));
    }
    let horizon = f.horizon();
    let ens = ensemble(m, x, horizon, params)?;
    let d = m.dim();
    let mom = ens.reduce_paths(params.n_paths, params.workers, d + 1, |path, _, out| {
        let slots = f.slot_gradients(m, path)?;
        let qt = evolve_q(path, m, 0)?;
        let v = damped_dot(&slots, &qt);
        out[..d].copy_from_slice(&v.as_slice()[..d]);
        let prof = MuProfile::new(m, path, bounds)?;
        let e = energy_profile(m, f, path, &slots, &prof, q, 0.0)?;
        out[d] = (1.0 + prof.mass(0, path.n_steps())).powf(q - 1.0) * e[0];
        Ok(())
    })?;
    let mut r = InequalityReport::new("pathspace-gradient", &mom, |s| norm_of(&s[..d]).powf(q), |s| s[d])
        .param("q", q)
        .param("T", horizon)
        .param("slots", f.times.len())
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma));
    if params.cross_check {
        let fd = grad_expectation_fd(m, x, f, 1e-3, &params.mc(horizon, 2))?;
        let bis = frame_vec(&mom.mean[..d]);
        let bis_ci = mom.estimate(|s| norm_of(&s[..d])).ci;
        r.notes.push(agreement_note("∇𝔼F", &bis, bis_ci, &fd.vector(), fd.norm.ci));
    }
    Ok(r)
}

/// Whether `𝔼(F^power | ℱ_t)` needs inner simulation.
fn needs_nesting(m: &ManifoldSpec, f: &CylindricFunction, t: f64, power: i32) -> bool {
    let rest: Vec<&FeatureFunction> = f.times.iter().zip(&f.factors).filter(|(s, _)| **s > t * (1.0 + 1e-12)).map(|(_, g)| g).collect();
    match rest.as_slice() {
        [] => false,
        [g] => {
            let first = sphere_heat_oracle(m, g, 1.0).is_some();
            let second = g.squared().is_some_and(|g2| sphere_heat_oracle(m, &g2, 1.0).is_some());
            match power {
                1 => !first,
                _ => !(second && (first || f.combine == Combine::Product)),
            }
        }
        _ => true,
    }
}

/// Per-path `∫_{t_a}^{t_b}` of the energy-form integrand, by the left-point
/// rule on the path grid and on every other knot.
fn energy_integrals(e: &[f64], a: usize, b: usize, dt: f64) -> (f64, f64) {
    let fine: f64 = e[a..b].iter().sum::<f64>() * dt;
    let coarse: f64 = (a..b).step_by(2).map(|k| e[k] * (2.0 * dt).min((b - k) as f64 * dt)).sum();
    (fine, coarse)
}

/// Control coefficient `∇_x 𝔼F` from an independent pilot run.
fn control_coefficient(m: &ManifoldSpec, x: &Point, f: &CylindricFunction, params: &CheckParams) -> Result<FrameVector> {
    let pilot = CheckParams { n_paths: (params.n_paths / 4).max(1000), seed: params.mc(f.horizon(), 3).seed, ..*params };
    let ens = ensemble(m, x, f.horizon(), &pilot)?;
    let d = m.dim();
    let mom = ens.reduce_paths(pilot.n_paths, pilot.workers, d, |path, _, out| {
        let slots = f.slot_gradients(m, path)?;
        let v = damped_dot(&slots, &evolve_q(path, m, 0)?);
        out.copy_from_slice(&v.as_slice()[..d]);
        Ok(())
    })?;
    Ok(frame_vec(&mom.mean))
}

/// `𝔼[(𝔼(F|ℱ_t))²] − (𝔼F)² ≤ 2∫_0^t 𝔈_{s,T}(F,F) ds`.
pub fn check_poincare(
    m: &ManifoldSpec,
    x: &Point,
    f: &CylindricFunction,
    t: f64,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    bounds.validate()?;
    f.validate()?;
    let horizon = f.horizon();
    let ens = ensemble(m, x, horizon, params)?;
    let kt = ens.config.knot(t)?;
    let nested = needs_nesting(m, f, t, 1);
    if nested {
        check_nested_budget(params.n_paths, params.n_inner)?;
    }
    let c = if params.control_variate && kt > 0 { control_coefficient(m, x, f, params)? } else { FrameVector::zeros() };
    let dt = ens.config.dt();
    let var_c = 2.0 * t * c.norm_squared();
    // [Y, Y², Y·C, inner variance, fine ∫, coarse ∫], Y = Ĝ − C
    let mom = ens.reduce_paths(params.n_paths, params.workers, 6, |path, _, out| {
        let g = conditional_moment(m, f, path, kt, params.n_inner, 1)?;
        let cv = std::f64::consts::SQRT_2 * c.dot(&path.wiener_at(kt));
        let y = g.value - cv;
        let slots = f.slot_gradients(m, path)?;
        let prof = MuProfile::new(m, path, bounds)?;
        let e = energy_profile(m, f, path, &slots, &prof, 2.0, 1.0)?;
        let (fine, coarse) = energy_integrals(&e, 0, kt, dt);
        out.copy_from_slice(&[y, y * y, y * cv, g.variance, fine, coarse]);
        Ok(())
    })?;
    let lhs = move |s: &[f64]| s[1] - s[3] - s[0] * s[0] + 2.0 * s[2] + var_c;
    let mut r = InequalityReport::new("poincare", &mom, lhs, |s| 2.0 * s[4])
        .param("t", t)
        .param("T", horizon)
        .param("nested", nested)
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma));
    r.notes.push(format!("quadrature gap at half resolution: {:.3e}", 2.0 * (mom.mean[4] - mom.mean[5]).abs()));
    Ok(r)
}

/// `G log G` with the second-order correction for inner sampling noise.
fn entropy_term(g: f64, inner_var: f64) -> Result<f64> {
    if !(g > 0.0) {
        return Err(Error::Conditioning(g));
    }
    Ok(g * g.ln() - inner_var / (2.0 * g))
}

/// `𝔼[G_{t₁} log G_{t₁}] − 𝔼[G_{t₀} log G_{t₀}] ≤ 4∫_{t₀}^{t₁} 𝔈_{s,T}(F,F) ds`,
/// `G_t = 𝔼(F²|ℱ_t)`.
pub fn check_logsobolev(
    m: &ManifoldSpec,
    x: &Point,
    f: &CylindricFunction,
    t0: f64,
    t1: f64,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    bounds.validate()?;
    f.validate()?;
    if !(0.0 <= t0 && t0 < t1) {
        return Err(invalid("interval", format!("need 0 ≤ t₀ < t₁, got {t0}, {t1}")));
    }
    let horizon = f.horizon();
    let ens = ensemble(m, x, horizon, params)?;
    let (k0, k1) = (ens.config.knot(t0)?, ens.config.knot(t1)?);
    let nested = needs_nesting(m, f, t1, 2) || (k0 > 0 && needs_nesting(m, f, t0, 2));
    if nested {
        check_nested_budget(params.n_paths, params.n_inner)?;
    }
    let dt = ens.config.dt();
    // [h(G₁), G₁, h(G₀), fine ∫, coarse ∫]; at t₀ = 0 the tower property gives G₀ = 𝔼G₁
    let mom = ens.reduce_paths(params.n_paths, params.workers, 5, |path, _, out| {
        let g1 = conditional_moment(m, f, path, k1, params.n_inner, 2)?;
        let h0 = if k0 > 0 {
            let g0 = conditional_moment(m, f, path, k0, params.n_inner, 2)?;
            entropy_term(g0.value, g0.variance)?
        } else {
            0.0
        };
        let slots = f.slot_gradients(m, path)?;
        let prof = MuProfile::new(m, path, bounds)?;
        let e = energy_profile(m, f, path, &slots, &prof, 2.0, 1.0)?;
        let (fine, coarse) = energy_integrals(&e, k0, k1, dt);
        out.copy_from_slice(&[entropy_term(g1.value, g1.variance)?, g1.value, h0, fine, coarse]);
        Ok(())
    })?;
    if mom.min[1] <= 0.0 {
        return Err(Error::Conditioning(mom.min[1]));
    }
    let lhs = move |s: &[f64]| if k0 == 0 { s[0] - s[1] * s[1].ln() } else { s[0] - s[2] };
    let mut r = InequalityReport::new("logsobolev", &mom, lhs, |s| 4.0 * s[3])
        .param("t0", t0)
        .param("t1", t1)
        .param("T", horizon)
        .param("nested", nested)
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma));
    r.notes.push(format!("quadrature gap at half resolution: {:.3e}", 4.0 * (mom.mean[3] - mom.mean[4]).abs()));
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncatedMode {
    /// Poincaré at `t = T`.
    Poincare,
    /// log-Sobolev over `[0, T]`.
    LogSobolev,
}

/// Largest tolerated `ℙ(Φ < 1)` for truncated checks.
pub const EXIT_THRESHOLD: f64 = 1e-3;

fn sup_abs(f: &CylindricFunction) -> Option<f64> {
    let sups: Option<Vec<f64>> = f.factors.iter().map(|g| g.ambient_sup().map(|s| s.0)).collect();
    let sups = sups?;
    Some(match f.combine {
        Combine::Sum => sups.iter().sum(),
        Combine::Product => sups.iter().product(),
    })
}

/// Truncated-function variants over the whole horizon, where no nesting is
/// needed. The measured `ℙ(Φ < 1)` times `sup|F|²` (doubled for Poincaré,
/// with the entropy factor for log-Sobolev) is reported as a correction band.
pub fn check_truncated(
    m: &ManifoldSpec,
    x: &Point,
    f: &CylindricFunction,
    mode: TruncatedMode,
    bounds: &CurvatureBounds,
    params: &CheckParams,
) -> Result<InequalityReport> {
    let cutoff = f.cutoff.ok_or_else(|| invalid("cylindric function", "a cutoff is required"))?;
    bounds.validate()?;
    let horizon = f.horizon();
    let ens = ensemble(m, x, horizon, params)?;
    let n = ens.config.n_steps;
    let dt = ens.config.dt();
    // [F̃, F̃², F̃² log F̃², exited, |F| max, ∫ energy]
    let mom = ens.reduce_paths(params.n_paths, params.workers, 6, |path: &PathSample, _, out| {
        let slots = f.slot_gradients(m, path)?;
        let v = slots.value;
        let cv = cutoff_value(m, &cutoff, path);
        let prof = MuProfile::new(m, path, bounds)?;
        let e = energy_profile(m, f, path, &slots, &prof, 2.0, 1.0)?;
        let (fine, _) = energy_integrals(&e, 0, n, dt);
        let v2 = v * v;
        let ent = if v2 > 0.0 { v2 * v2.ln() } else { 0.0 };
        let exited = if cv.running_max > cutoff.r_in { 1.0 } else { 0.0 };
        out.copy_from_slice(&[v, v2, ent, exited, v.abs(), fine]);
        Ok(())
    })?;
    let exit = mom.component(3);
    if exit.value > EXIT_THRESHOLD {
        return Err(Error::ExitProbability { measured: exit.value, threshold: EXIT_THRESHOLD });
    }
    let sup = sup_abs(f).unwrap_or(mom.max[4]);
    let exit_upper = exit.value + exit.ci.max(3.0 / mom.n_paths as f64);
    let (name, band, report) = match mode {
        TruncatedMode::Poincare => {
            let band = 2.0 * exit_upper * sup * sup;
            ("truncated-poincare", band, InequalityReport::new("truncated-poincare", &mom, |s| s[1] - s[0] * s[0], |s| 2.0 * s[5]))
        }
        TruncatedMode::LogSobolev => {
            if mom.min[1] <= 0.0 && mom.mean[1] <= 0.0 {
                return Err(Error::Conditioning(mom.mean[1]));
            }
            let s2 = sup * sup;
            let band = exit_upper * (s2 * s2.max(1.0).ln().abs() + 1.0 / std::f64::consts::E) * 2.0;
            (
                "truncated-logsobolev",
                band,
                InequalityReport::new("truncated-logsobolev", &mom, |s| s[2] - s[1] * s[1].ln(), |s| 4.0 * s[5]),
            )
        }
    };
    let mut r = report
        .with_band(band)
        .param("T", horizon)
        .param("r_in", cutoff.r_in)
        .param("r_out", cutoff.r_out)
        .param("K", format!("{:?}", bounds.k))
        .param("sigma", format!("{:?}", bounds.sigma));
    r.name = name.to_string();
    r.notes.push(format!("exit probability {:.3e} ± {:.1e}", exit.value, exit.ci));
    Ok(r)
}
