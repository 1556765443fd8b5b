//! Conformal change `g_φ = φ⁻² g`: transformed connection, curvature and
//! second fundamental form, dominating bounds on `M_φ = {φ > 0}`, and the
//! locality experiment comparing curvature probes on `M` and `M_φ`.
//!
//! Derivatives of φ are central differences in normal coordinates
//! `a ↦ φ(exp_x(Σ aᵢ eᵢ))` with step [`H_FD`]. Where φ is identically one
//! around `x` every difference is exactly zero, so the transformed tensors
//! reproduce the base tensors bit for bit.

use serde::{Deserialize, Serialize};

use crate::diffusion::{Ensemble, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::estimators::{ricci_estimate, CurvatureParams, CurvatureReport, TestFunction};
use crate::stats::McEstimate;
use crate::geometry::{
    eye, symmetric_part_norm, ChartBase, ConformalDisk, ConformalFactor, Frame, FrameVector, ManifoldKind,
    ManifoldSpec, Mat, Point, Vector, MAX_DIM,
};

pub const H_FD: f64 = 1e-4;

/// Which zeroth-order coefficient multiplies `g` in the transformed Ricci tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RicciVariant {
    /// `φ⁻¹Δφ − (d−3)|∇log φ|`, as printed.
    Printed,
    /// `φ⁻¹Δφ − (d−3)|∇log φ|²`.
    PrintedSquared,
    /// `φ⁻¹Δφ − (d−1)|∇log φ|²`, the standard conformal-change identity.
    Classical,
}

impl RicciVariant {
    pub const ALL: [RicciVariant; 3] = [RicciVariant::Printed, RicciVariant::PrintedSquared, RicciVariant::Classical];
}

/// Value, gradient, Hessian and Laplacian of φ at a point, in frame coordinates.
#[derive(Debug, Clone, Copy)]
pub struct FactorJet {
    pub value: f64,
    pub grad: FrameVector,
    pub hess: Mat,
    pub laplacian: f64,
}

fn factor_at(m: &ManifoldSpec, phi: &ConformalFactor, p: &Point) -> f64 {
    phi.value(m.base_geometry(), &m.feature(p))
}

fn positive_factor(m: &ManifoldSpec, phi: &ConformalFactor, x: &Point) -> Result<f64> {
    let v = factor_at(m, phi, x);
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::OutsideConformalDomain(v))
    }
}

pub fn factor_jet(m: &ManifoldSpec, phi: &ConformalFactor, x: &Point, frame: &Frame) -> Result<FactorJet> {
    let value = positive_factor(m, phi, x)?;
    let d = frame.dim;
    let h = H_FD;
    let at = |v: Vector| factor_at(m, phi, &m.exp_map(x, &v));
    let mut grad = FrameVector::zeros();
    let mut hess = Mat::zeros();
    for i in 0..d {
        let ei = frame.basis[i] * h;
        let (fp, fm) = (at(ei), at(-ei));
        grad[i] = (fp - fm) / (2.0 * h);
        hess[(i, i)] = (fp - 2.0 * value + fm) / (h * h);
        for j in 0..i {
            let ej = frame.basis[j] * h;
            let mixed = (at(ei + ej) - at(ei - ej) - at(ej - ei) + at(-ei - ej)) / (4.0 * h * h);
            hess[(i, j)] = mixed;
            hess[(j, i)] = mixed;
        }
    }
    let laplacian = hess.trace();
    Ok(FactorJet {
        value,
        grad,
        hess,
        laplacian,
    })
}

/// `∇^φ_X Y` for a tangent field `Y` given as a closure on points.
pub fn transformed_connection(
    m: &ManifoldSpec,
    phi: &ConformalFactor,
    x: &Point,
    xv: &Vector,
    field: &dyn Fn(&Point) -> Vector,
) -> Result<Vector> {
    let frame = m.default_frame(x);
    let jet = factor_jet(m, phi, x, &frame)?;
    let h = H_FD;
    let y = field(x);
    let plus = field(&m.exp_map(x, &(xv * h)));
    let minus = field(&m.exp_map(x, &(xv * -h)));
    let mut cov = (plus - minus) / (2.0 * h);
    cov = match &m.kind {
        ManifoldKind::ConformalDisk(disk) => cov + ConformalDisk::christoffel(&disk.grad_log_lambda(&x.coords), xv, &y),
        _ => m.tangent_project(x, &cov)?,
    };
    let grad_log = frame.apply(&(jet.grad / jet.value));
    Ok(cov - y * m.inner(x, xv, &grad_log) - xv * m.inner(x, &y, &grad_log) + grad_log * m.inner(x, xv, &y))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformedCurvature {
    /// `Ric_φ(φeⱼ, φeᵢ)` in the φ-orthonormal frame `(φeᵢ)`.
    pub matrix: Mat,
    /// Same with the drift term of `φZ` subtracted.
    pub ricci_z: Mat,
    /// `‖Ric^φ_{φZ}‖(x)`.
    pub norm: f64,
    pub variant: RicciVariant,
}

pub fn transformed_curvature(
    m: &ManifoldSpec,
    phi: &ConformalFactor,
    x: &Point,
    frame: &Frame,
    variant: RicciVariant,
) -> Result<TransformedCurvature> {
    let jet = factor_jet(m, phi, x, frame)?;
    let d = frame.dim;
    let df = d as f64;
    let p = jet.value;
    let grad_log = jet.grad / p;
    let gl2 = grad_log.norm_squared();
    let zeroth = jet.laplacian / p
        - match variant {
            RicciVariant::Printed => (df - 3.0) * gl2.sqrt(),
            RicciVariant::PrintedSquared => (df - 3.0) * gl2,
            RicciVariant::Classical => (df - 1.0) * gl2,
        };
    let mut base = Mat::zeros();
    for i in 0..d {
        for j in 0..d {
            base[(i, j)] = m.ricci(x, &frame.basis[j], &frame.basis[i]) + (df - 2.0) * jet.hess[(i, j)] / p;
        }
    }
    base += eye(d) * zeroth;
    let matrix = base * (p * p);

    // ⟨∇^φ_{eⱼ}(φZ), eᵢ⟩ with ∇_{eⱼ}(φZ) = (eⱼφ)Z + φ∇_{eⱼ}Z
    let z = m.frame_coords(x, frame, &m.drift(x));
    let w = z * p;
    let w_dot_gl = w.dot(&grad_log);
    let mut drift_term = Mat::zeros();
    for j in 0..d {
        let dz = m.frame_coords(x, frame, &m.drift_derivative(x, &frame.basis[j]));
        let mut col = z * jet.grad[j] + dz * p - w * grad_log[j] + grad_log * w[j];
        col[j] -= w_dot_gl;
        for i in 0..d {
            drift_term[(i, j)] = col[i];
        }
    }
    let ricci_z = matrix - drift_term;
    Ok(TransformedCurvature {
        matrix,
        ricci_z,
        norm: symmetric_part_norm(&ricci_z, d),
        variant,
    })
}

/// `𝕀^φ(φeⱼ, φeᵢ)` at a boundary point, with `𝕀^φ = φ⁻¹𝕀 + (N log φ)g` on
/// boundary tangents.
pub fn transformed_second_form(m: &ManifoldSpec, phi: &ConformalFactor, x: &Point, frame: &Frame) -> Result<Mat> {
    let ii = m.second_form_matrix(x, frame)?;
    let p = positive_factor(m, phi, x)?;
    let n = m.boundary_data(x).normal.expect("boundary normal");
    let h = H_FD;
    let fp = factor_at(m, phi, &m.exp_map(x, &(n * h)));
    let fm = factor_at(m, phi, &m.exp_map(x, &(n * -h)));
    let n_log = (fp - fm) / (2.0 * h * p);
    let a = m.frame_coords(x, frame, &n);
    let tangential = eye(frame.dim) - a * a.transpose();
    Ok((ii / p + tangential * n_log) * (p * p))
}

/// Curvature of `φ⁻²g` read off a two-dimensional chart: finite differences
/// of the chart's conformal scale. Independent of the tensor formula.
pub fn chart_curvature_oracle(m: &ManifoldSpec, phi: &ConformalFactor, x: &Point) -> Result<f64> {
    positive_factor(m, phi, x)?;
    let disk = chart_disk(m, phi)?;
    Ok(disk.gaussian_curvature(&chart_coords(m, x)?))
}

/// The two-dimensional chart model of `(M_φ, g_φ)`.
pub fn chart_disk(m: &ManifoldSpec, phi: &ConformalFactor) -> Result<ConformalDisk> {
    let base = match &m.kind {
        ManifoldKind::Sphere { dim: 2 } | ManifoldKind::SphericalCap { .. } => ChartBase::Stereographic,
        ManifoldKind::HalfSpace { dim: 2 } => ChartBase::Flat,
        _ => return Err(invalid("manifold", "chart models exist for two-dimensional spheres and planes only")),
    };
    if m.drift != crate::geometry::Drift::None {
        return Err(invalid("drift", "chart models carry no drift"));
    }
    Ok(ConformalDisk::new(base, phi.clone()))
}

/// Chart coordinates of a point of a two-dimensional base.
pub fn chart_coords(m: &ManifoldSpec, x: &Point) -> Result<Vector> {
    match &m.kind {
        ManifoldKind::Sphere { dim: 2 } | ManifoldKind::SphericalCap { .. } => {
            let b = x.coords;
            if 1.0 + b[0] < 1e-9 {
                return Err(invalid("point", "the stereographic chart omits (−1, 0, 0)"));
            }
            Ok(ConformalDisk::new(ChartBase::Stereographic, ConformalFactor::One).chart_point(&b))
        }
        ManifoldKind::HalfSpace { dim: 2 } => Ok(x.coords),
        _ => Err(invalid("manifold", "chart models exist for two-dimensional spheres and planes only")),
    }
}

/// Sampling grid for the dominating bounds on `M_φ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points per unit of the coarsest axis; refined twice for the convergence check.
    pub resolution: usize,
    /// Flat bases: half-width of the sampled box around `center`.
    pub half_width: f64,
    pub center: Vector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DominatingBounds {
    pub k_r: f64,
    pub sigma_r: f64,
    pub k_r_refined: f64,
    pub sigma_r_refined: f64,
    /// Relative change under 2× refinement is below 5%.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalManifold {
    pub base: ManifoldSpec,
    pub factor: ConformalFactor,
}

impl ConformalManifold {
    pub fn new(base: ManifoldSpec, factor: ConformalFactor) -> Self {
        Self { base, factor }
    }

    pub fn factor_at(&self, x: &Point) -> f64 {
        factor_at(&self.base, &self.factor, x)
    }

    pub fn contains(&self, x: &Point) -> bool {
        self.factor_at(x) > 0.0
    }

    /// Transformed drift `φZ`.
    pub fn drift(&self, x: &Point) -> Vector {
        self.base.drift(x) * self.factor_at(x)
    }

    pub fn curvature(&self, x: &Point, variant: RicciVariant) -> Result<TransformedCurvature> {
        let frame = self.base.default_frame(x);
        transformed_curvature(&self.base, &self.factor, x, &frame, variant)
    }

    /// `‖𝕀^φ‖(x)` over unit boundary tangents.
    pub fn second_form_norm(&self, x: &Point) -> Result<f64> {
        let n = self.base.boundary_data(x).normal.expect("boundary normal");
        let frame = self.base.frame_with_first(x, &n);
        let m = transformed_second_form(&self.base, &self.factor, x, &frame)?;
        Ok(symmetric_part_norm(&m, frame.dim))
    }

    fn grid_sup(&self, grid: &GridSpec, refine: usize) -> Result<(f64, f64)> {
        let res = grid.resolution * refine;
        let (interior, boundary) = self.grid_points(grid, res);
        let mut k = 0.0_f64;
        for x in interior.iter().filter(|x| self.contains(x)) {
            k = k.max(self.curvature(x, RicciVariant::Classical)?.norm);
        }
        let mut s = 0.0_f64;
        for x in boundary.iter().filter(|x| self.contains(x)) {
            s = s.max(self.second_form_norm(x)?);
        }
        Ok((k, s))
    }

    /// `K_R`, `σ_R` by dense grid sampling with a 2× refinement check.
    pub fn bounds(&self, grid: &GridSpec) -> Result<DominatingBounds> {
        let (k_r, sigma_r) = self.grid_sup(grid, 1)?;
        let (k2, s2) = self.grid_sup(grid, 2)?;
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
        let converged = rel(k_r, k2) < 0.05 && (s2 == 0.0 || rel(sigma_r, s2) < 0.05);
        Ok(DominatingBounds {
            k_r,
            sigma_r,
            k_r_refined: k2,
            sigma_r_refined: s2,
            converged,
        })
    }

    fn grid_points(&self, grid: &GridSpec, res: usize) -> (Vec<Point>, Vec<Point>) {
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        let m = &self.base;
        match &m.kind {
            ManifoldKind::Sphere { dim: 2 } | ManifoldKind::SphericalCap { .. } => {
                let th_max = match m.kind {
                    ManifoldKind::SphericalCap { colatitude } => colatitude,
                    _ => std::f64::consts::PI,
                };
                let n_th = (res as f64 * th_max).ceil().max(2.0) as usize;
                let n_ph = (res as f64 * std::f64::consts::TAU).ceil() as usize;
                let ring = |th: f64, k: usize| {
                    let ph = std::f64::consts::TAU * k as f64 / n_ph as f64;
                    Point::new(crate::geometry::vector(&[th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()]))
                };
                for i in 0..=n_th {
                    let th = th_max * i as f64 / n_th as f64;
                    for k in 0..n_ph {
                        interior.push(ring(th, k));
                    }
                }
                if m.has_boundary() {
                    for k in 0..n_ph {
                        boundary.push(ring(th_max, k));
                    }
                }
            }
            ManifoldKind::HalfSpace { dim } => {
                let d = *dim;
                let n = ((2.0 * grid.half_width * res as f64).ceil() as usize).max(2);
                let total = (n + 1).pow(d as u32);
                for idx in 0..total {
                    let mut v = Vector::zeros();
                    let mut rem = idx;
                    for c in 0..d {
                        let k = rem % (n + 1);
                        rem /= n + 1;
                        v[c] = grid.center[c] - grid.half_width + 2.0 * grid.half_width * k as f64 / n as f64;
                    }
                    if v[d - 1] < 0.0 {
                        continue;
                    }
                    let on_plane = v[d - 1] == 0.0;
                    interior.push(Point::new(v));
                    if on_plane {
                        boundary.push(Point::new(v));
                    }
                }
                // make sure the hyperplane is sampled even when the box misses it
                if boundary.is_empty() && grid.center[d - 1] - grid.half_width <= 0.0 {
                    for idx in 0..(n + 1).pow((d - 1) as u32) {
                        let mut v = Vector::zeros();
                        let mut rem = idx;
                        for c in 0..d - 1 {
                            let k = rem % (n + 1);
                            rem /= n + 1;
                            v[c] = grid.center[c] - grid.half_width + 2.0 * grid.half_width * k as f64 / n as f64;
                        }
                        boundary.push(Point::new(v));
                    }
                }
            }
            _ => {}
        }
        debug_assert!(MAX_DIM >= 2);
        (interior, boundary)
    }
}

/// Largest tolerated probability of leaving the region where `φ = 1`.
pub const LOCALITY_EXIT_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityReport {
    pub base: CurvatureReport,
    pub conformal: CurvatureReport,
    /// Conformal minus base headline estimate.
    pub difference: McEstimate,
    /// `ℙ(sup_{s ≤ T_max} ρ(x, X_s) ≥ r_in)` on the base manifold.
    pub exit_probability: McEstimate,
    /// `|difference| ≤ 2·combined CI`.
    pub agree: bool,
}

/// Runs [`ricci_estimate`] for the `k`-th coordinate on `M` and on the chart
/// model of `(M_φ, g_φ)`, where `φ` must equal one on `B_{r_in}(x)`.
pub fn locality_experiment(
    m: &ManifoldSpec,
    x: &Point,
    phi: &ConformalFactor,
    r_in: f64,
    k: usize,
    params: &CurvatureParams,
) -> Result<LocalityReport> {
    let t_max = params.schedule.iter().copied().fold(0.0, f64::max);
    let cfg = SimConfig::new(t_max, params.n_steps, params.seed ^ 0x10ca_1e).with_exit_radius(r_in);
    let ens = Ensemble::at(m.clone(), *x, cfg)?;
    let exits = ens.reduce_paths(params.n_paths, params.workers, 1, |path, _, out| {
        out[0] = if path.exited_at.is_some() { 1.0 } else { 0.0 };
        Ok(())
    })?;
    let exit_probability = exits.component(0);
    if exit_probability.value > LOCALITY_EXIT_THRESHOLD {
        return Err(Error::ExitProbability { measured: exit_probability.value, threshold: LOCALITY_EXIT_THRESHOLD });
    }

    let base = ricci_estimate(m, &TestFunction::coordinate(m, *x, k)?, params)?;
    let disk = ManifoldSpec::conformal_disk(chart_disk(m, phi)?);
    let y = disk.point(chart_coords(m, x)?.as_slice()[..2].as_ref())?;
    let conformal = ricci_estimate(&disk, &TestFunction::coordinate(&disk, y, k)?, params)?;
    let difference = McEstimate {
        value: conformal.estimate.value - base.estimate.value,
        ci: (base.estimate.ci.powi(2) + conformal.estimate.ci.powi(2)).sqrt(),
        n_paths: params.n_paths,
        discarded: base.estimate.discarded + conformal.estimate.discarded,
    };
    let agree = difference.value.abs() <= 2.0 * difference.ci;
    Ok(LocalityReport { base, conformal, difference, exit_probability, agree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{vector, Cutoff, Drift};
    use std::f64::consts::FRAC_PI_3;

    #[test]
    fn identity_factor_leaves_tensors_unchanged() {
        let cap = ManifoldSpec::spherical_cap(FRAC_PI_3).unwrap();
        let th = FRAC_PI_3;
        let x = cap.point(&[th.sin(), 0.0, th.cos()]).unwrap();
        let frame = cap.frame_with_first(&x, &vector(&[0.0, 1.0, 0.0]));
        for v in RicciVariant::ALL {
            let t = transformed_curvature(&cap, &ConformalFactor::One, &x, &frame, v).unwrap();
            assert_eq!(t.matrix, cap.ricci_z_matrix(&x, &frame));
        }
        let ii = transformed_second_form(&cap, &ConformalFactor::One, &x, &frame).unwrap();
        assert_eq!(ii, cap.second_form_matrix(&x, &frame).unwrap());
    }

    #[test]
    fn cutoff_locality_is_exact() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let phi = ConformalFactor::Cutoff { center: x.coords, cutoff: Cutoff::new(0.5, 1.0) };
        let (ric, second, z) = m.conformal_tensors(&phi, &x).unwrap();
        assert_eq!(ric, m.ricci_z_matrix(&x, &m.default_frame(&x)));
        assert!(second.is_none());
        assert_eq!(z, Vector::zeros());
    }

    #[test]
    fn outside_support_is_an_error() {
        let m = ManifoldSpec::half_space(2);
        let x = m.point(&[3.0, 3.0]).unwrap();
        let phi = ConformalFactor::Cutoff { center: vector(&[0.0, 0.0]), cutoff: Cutoff::new(0.5, 1.0) };
        assert!(matches!(m.conformal_tensors(&phi, &x), Err(Error::OutsideConformalDomain(_))));
    }

    #[test]
    fn connection_matches_chart_christoffels() {
        let m = ManifoldSpec::half_space(2);
        let phi = ConformalFactor::Gaussian { center: Vector::zeros(), rate: 1.0 };
        let x = m.point(&[0.3, 0.4]).unwrap();
        let xv = vector(&[0.6, -0.2]);
        let field = |p: &Point| vector(&[1.0 + p.coords[1], p.coords[0] * p.coords[0]]);
        let got = transformed_connection(&m, &phi, &x, &xv, &field).unwrap();
        let disk = ConformalDisk::new(ChartBase::Flat, phi.clone());
        let flat_deriv = vector(&[xv[1], 2.0 * x.coords[0] * xv[0]]);
        let expected = flat_deriv + ConformalDisk::christoffel(&disk.grad_log_lambda(&x.coords), &xv, &field(&x));
        assert!((got - expected).norm() < 1e-5, "{got:?} vs {expected:?}");
    }

    #[test]
    fn torsion_free() {
        let m = ManifoldSpec::half_space(2);
        let phi = ConformalFactor::Gaussian { center: Vector::zeros(), rate: 0.5 };
        let x = m.point(&[0.2, 0.5]).unwrap();
        // constant coordinate fields commute
        let a = vector(&[1.0, 0.0]);
        let b = vector(&[0.3, 0.7]);
        let ab = transformed_connection(&m, &phi, &x, &a, &|_: &Point| b).unwrap();
        let ba = transformed_connection(&m, &phi, &x, &b, &|_: &Point| a).unwrap();
        assert!((ab - ba).norm() < 1e-10);
    }

    #[test]
    fn classical_variant_matches_flat_chart_oracle() {
        let m = ManifoldSpec::half_space(2);
        let phi = ConformalFactor::Bump { center: vector(&[0.0, 3.0]), radius: 1.0, depth: 0.5 };
        for c in [[0.2, 3.1], [-0.4, 2.7], [0.5, 3.5]] {
            let x = m.point(&c).unwrap();
            let oracle = chart_curvature_oracle(&m, &phi, &x).unwrap();
            let t = transformed_curvature(&m, &phi, &x, &m.default_frame(&x), RicciVariant::Classical).unwrap();
            assert!((t.matrix - eye(2) * oracle).norm() < 1e-3, "{} vs {oracle}", t.matrix[(0, 0)]);
        }
    }

    #[test]
    fn classical_variant_matches_sphere_chart_oracle() {
        let m = ManifoldSpec::sphere(2);
        let phi = ConformalFactor::Gaussian { center: vector(&[1.0, 0.0, 0.0]), rate: 0.3 };
        let th: f64 = 1.2;
        let x = m.point(&[th.sin(), 0.0, th.cos()]).unwrap();
        let oracle = chart_curvature_oracle(&m, &phi, &x).unwrap();
        let t = transformed_curvature(&m, &phi, &x, &m.default_frame(&x), RicciVariant::Classical).unwrap();
        assert!((t.matrix - eye(2) * oracle).norm() < 1e-3);
    }

    #[test]
    fn unit_norm_covariance() {
        // g_φ(φX, φX) = φ⁻²·φ²|X|² = |X|²
        let phi_val: f64 = 0.37;
        for s in [0.1, 1.0, 3.0] {
            let x = vector(&[0.6 * s, 0.8 * s]);
            let g_phi = (phi_val * phi_val).recip() * (x * phi_val).norm_squared();
            assert!((g_phi - x.norm_squared()).abs() < 1e-12);
        }
    }

    #[test]
    fn hemisphere_normal_log_derivative_term() {
        let m = ManifoldSpec::spherical_cap(std::f64::consts::FRAC_PI_2).unwrap();
        let x = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let c = 0.4;
        // φ = exp(c(⟨e₃, x⟩ − 1)): N log φ = c at the equator
        let phi = ConformalFactor::Exponential { direction: vector(&[0.0, 0.0, 1.0]), rate: c };
        let frame = m.frame_with_first(&x, &vector(&[0.0, 1.0, 0.0]));
        let ii = transformed_second_form(&m, &phi, &x, &frame).unwrap();
        let p = (-c).exp();
        assert!((ii[(0, 0)] - c * p * p).abs() < 1e-6);
    }

    #[test]
    fn drift_enters_through_transformed_connection() {
        let m = ManifoldSpec::half_space(2)
            .with_drift(Drift::QuadraticWell { center: vector(&[0.0, 3.0]), strength: 1.0 })
            .unwrap();
        let x = m.point(&[0.1, 2.9]).unwrap();
        let t = transformed_curvature(&m, &ConformalFactor::One, &x, &m.default_frame(&x), RicciVariant::Classical)
            .unwrap();
        assert!((t.ricci_z - eye(2)).norm() < 1e-12);
        assert!((t.norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grid_bounds_are_finite_and_converge() {
        let m = ManifoldSpec::half_space(2);
        let phi = ConformalFactor::Bump { center: vector(&[0.0, 2.0]), radius: 1.0, depth: 0.3 };
        let cm = ConformalManifold::new(m, phi);
        let b = cm
            .bounds(&GridSpec { resolution: 8, half_width: 1.5, center: vector(&[0.0, 2.0]) })
            .unwrap();
        assert!(b.k_r.is_finite() && b.k_r > 0.0);
        assert_eq!(b.sigma_r, 0.0);
        assert!(b.converged, "{b:?}");
    }

    #[test]
    fn locality_on_flat_base_with_distant_bump() {
        let m = ManifoldSpec::half_space(2);
        let x = m.point(&[0.0, 10.0]).unwrap();
        let phi = ConformalFactor::Bump { center: vector(&[4.0, 10.0]), radius: 1.5, depth: 0.5 };
        let mut params = CurvatureParams::interior(1000, 2);
        params.n_steps = 16;
        params.schedule = crate::stats::dyadic_schedule(0.04, 4);
        let r = locality_experiment(&m, &x, &phi, 2.0, 0, &params).unwrap();
        assert!(r.agree, "{:?}", r.difference);
        assert!(r.base.estimate.value.abs() < 0.05 && r.conformal.estimate.value.abs() < 0.05);
    }

    #[test]
    fn locality_rejects_short_inner_radius() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[1.0, 0.0, 0.0]).unwrap();
        let phi = ConformalFactor::Cutoff { center: x.coords, cutoff: Cutoff::new(0.3, 0.6) };
        let mut params = CurvatureParams::interior(500, 2);
        params.n_steps = 16;
        let err = locality_experiment(&m, &x, &phi, 0.3, 2, &params).unwrap_err();
        assert!(matches!(err, Error::ExitProbability { .. }));
    }
}
