//! Analytic manifold oracles for a closed catalog of test manifolds.
//!
//! Every manifold is represented in ambient coordinates: spheres and caps
//! live in ℝ^{d+1}, the half-space and conformal disks in ℝ^d. Vectors are
//! padded to [`MAX_AMBIENT`] components, frames to [`MAX_DIM`] vectors, and
//! frame-coordinate matrices to `MAX_DIM × MAX_DIM`; the padding is kept
//! at zero throughout.

pub mod chart;
pub mod factor;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
pub use chart::{ChartBase, ConformalDisk};
pub use factor::{BaseGeometry, ConformalFactor, Cutoff};

pub const MAX_AMBIENT: usize = 4;
pub const MAX_DIM: usize = 3;

/// Ambient vector (zero-padded).
pub type Vector = SVector<f64, MAX_AMBIENT>;
/// Vector of frame coordinates in ℝ^d (zero-padded).
pub type FrameVector = SVector<f64, MAX_DIM>;
/// d×d matrix acting on frame coordinates (zero-padded).
pub type Mat = SMatrix<f64, MAX_DIM, MAX_DIM>;

pub const TOL_PROJ: f64 = 1e-10;
pub const TOL_FRAME: f64 = 1e-8;
/// A point within this distance of ∂M counts as a boundary point.
pub const TOL_BOUNDARY: f64 = 1e-8;

/// Identity on the first `d` frame coordinates.
pub fn eye(d: usize) -> Mat {
    let mut m = Mat::zeros();
    for i in 0..d {
        m[(i, i)] = 1.0;
    }
    m
}

pub fn vector(components: &[f64]) -> Vector {
    assert!(components.len() <= MAX_AMBIENT, "at most {MAX_AMBIENT} ambient components");
    let mut v = Vector::zeros();
    for (i, c) in components.iter().enumerate() {
        v[i] = *c;
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: Vector,
}

impl Point {
    pub fn new(coords: Vector) -> Self {
        Self { coords }
    }
}

/// Orthonormal basis `e₁..e_d` of the tangent space at a base point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub basis: [Vector; MAX_DIM],
    pub dim: usize,
}

impl Frame {
    pub fn new(vectors: &[Vector]) -> Self {
        let mut basis = [Vector::zeros(); MAX_DIM];
        basis[..vectors.len()].copy_from_slice(vectors);
        Self {
            basis,
            dim: vectors.len(),
        }
    }

    pub fn vectors(&self) -> &[Vector] {
        &self.basis[..self.dim]
    }

    /// `U a = Σ aᵢ eᵢ`.
    pub fn apply(&self, a: &FrameVector) -> Vector {
        let mut v = Vector::zeros();
        for i in 0..self.dim {
            v += self.basis[i] * a[i];
        }
        v
    }
}

/// Drift vector field `Z`, from a small vocabulary of gradient fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Drift {
    None,
    /// `Z = c·∇⟨a, x⟩` (constant on flat spaces; tilting field on spheres).
    LinearPotential { direction: Vector, strength: f64 },
    /// `Z = −∇(c|x−x₀|²/2) = −c(x−x₀)` on flat spaces.
    QuadraticWell { center: Vector, strength: f64 },
    /// `Z = −∇(c|x−x₀|⁴/4) = −c|x−x₀|²(x−x₀)` on flat spaces.
    QuarticWell { center: Vector, strength: f64 },
}

/// Nonnegative bound function, `offset + coef·|x − center|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundFn {
    Constant(f64),
    Radial { center: Vector, coef: f64, offset: f64 },
}

impl BoundFn {
    pub fn eval(&self, x: &Point) -> f64 {
        match self {
            BoundFn::Constant(c) => *c,
            BoundFn::Radial { center, coef, offset } => offset + coef * (x.coords - center).norm_squared(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = match self {
            BoundFn::Constant(c) => *c < 0.0 || !c.is_finite(),
            BoundFn::Radial { coef, offset, .. } => *coef < 0.0 || *offset < 0.0,
        };
        if bad {
            let v = match self {
                BoundFn::Constant(c) => *c,
                BoundFn::Radial { coef, offset, .. } => coef.min(*offset),
            };
            return Err(Error::InvalidBound(v));
        }
        Ok(())
    }

    /// `self + other` pointwise, for constant parts.
    pub fn plus(&self, eps: f64) -> BoundFn {
        match *self {
            BoundFn::Constant(c) => BoundFn::Constant(c + eps),
            BoundFn::Radial { center, coef, offset } => BoundFn::Radial {
                center,
                coef,
                offset: offset + eps,
            },
        }
    }
}

/// The pair `(K, σ)` dominating `‖Ric_Z‖` and `‖𝕀‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBounds {
    pub k: BoundFn,
    pub sigma: BoundFn,
}

impl CurvatureBounds {
    pub fn constant(k: f64, sigma: f64) -> Self {
        Self {
            k: BoundFn::Constant(k),
            sigma: BoundFn::Constant(sigma),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        self.k.validate()?;
        self.sigma.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ManifoldKind {
    /// Unit sphere `S^d ⊂ ℝ^{d+1}`.
    Sphere { dim: usize },
    /// `{x ∈ S² : colatitude(x) ≤ θ₀}` around the pole `(0,0,1)`.
    SphericalCap { colatitude: f64 },
    /// `{x ∈ ℝ^d : x_d ≥ 0}`.
    HalfSpace { dim: usize },
    ConformalDisk(ConformalDisk),
}

/// Boundary information at a point: signed distance to ∂M and the inward normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryData {
    pub distance: f64,
    pub normal: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    pub drift: Drift,
}

fn pole() -> Vector {
    vector(&[0.0, 0.0, 1.0])
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, drift: Drift) -> Result<Self> {
        let m = Self { kind, drift };
        m.validate()?;
        Ok(m)
    }

    pub fn sphere(dim: usize) -> Self {
        Self::new(ManifoldKind::Sphere { dim }, Drift::None).expect("valid sphere")
    }

    pub fn spherical_cap(colatitude: f64) -> Result<Self> {
        Self::new(ManifoldKind::SphericalCap { colatitude }, Drift::None)
    }

    pub fn half_space(dim: usize) -> Self {
        Self::new(ManifoldKind::HalfSpace { dim }, Drift::None).expect("valid half-space")
    }

    pub fn conformal_disk(disk: ConformalDisk) -> Self {
        Self::new(ManifoldKind::ConformalDisk(disk), Drift::None).expect("valid disk")
    }

    pub fn with_drift(self, drift: Drift) -> Result<Self> {
        Self::new(self.kind, drift)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ManifoldKind::Sphere { dim } => {
                if *dim < 1 || *dim + 1 > MAX_AMBIENT {
                    return Err(invalid("dim", format!("sphere dimension {dim} not in 1..={}", MAX_AMBIENT - 1)));
                }
            }
            ManifoldKind::SphericalCap { colatitude } => {
                if !(*colatitude > 0.0 && *colatitude < std::f64::consts::PI) {
                    return Err(invalid("colatitude", format!("{colatitude} not in (0, π)")));
                }
            }
            ManifoldKind::HalfSpace { dim } => {
                if *dim < 1 || *dim > MAX_DIM {
                    return Err(invalid("dim", format!("half-space dimension {dim} not in 1..={MAX_DIM}")));
                }
            }
            ManifoldKind::ConformalDisk(_) => {}
        }
        let spherical = self.is_spherical();
        match &self.drift {
            Drift::None => {}
            Drift::LinearPotential { strength, .. } => {
                if matches!(self.kind, ManifoldKind::ConformalDisk(_)) {
                    return Err(invalid("drift", "conformal disks support only Z = 0"));
                }
                if !strength.is_finite() {
                    return Err(invalid("drift", "non-finite strength"));
                }
            }
            Drift::QuadraticWell { .. } | Drift::QuarticWell { .. } => {
                if spherical || matches!(self.kind, ManifoldKind::ConformalDisk(_)) {
                    return Err(invalid("drift", "radial wells are defined on the half-space only"));
                }
            }
        }
        Ok(())
    }

    fn is_spherical(&self) -> bool {
        matches!(self.kind, ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. })
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere { dim } => *dim,
            ManifoldKind::SphericalCap { .. } => 2,
            ManifoldKind::HalfSpace { dim } => *dim,
            ManifoldKind::ConformalDisk(_) => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match &self.kind {
            ManifoldKind::Sphere { dim } => dim + 1,
            ManifoldKind::SphericalCap { .. } => 3,
            ManifoldKind::HalfSpace { dim } => *dim,
            ManifoldKind::ConformalDisk(_) => 2,
        }
    }

    pub fn has_boundary(&self) -> bool {
        matches!(self.kind, ManifoldKind::SphericalCap { .. } | ManifoldKind::HalfSpace { .. })
    }

    /// On-manifold residual of a point (0 for points inside the domain).
    pub fn residual(&self, x: &Point) -> f64 {
        let c = &x.coords;
        let padding: f64 = (self.ambient_dim()..MAX_AMBIENT).map(|i| c[i].abs()).sum();
        padding
            + match &self.kind {
                ManifoldKind::Sphere { .. } => (c.norm() - 1.0).abs(),
                ManifoldKind::SphericalCap { colatitude } => {
                    let th = c[2].clamp(-1.0, 1.0).acos();
                    (c.norm() - 1.0).abs() + (th - colatitude).max(0.0)
                }
                ManifoldKind::HalfSpace { dim } => (-c[dim - 1]).max(0.0),
                ManifoldKind::ConformalDisk(disk) => {
                    if disk.phi(c) > 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                }
            }
    }

    pub fn check_point(&self, x: &Point) -> Result<()> {
        let r = self.residual(x);
        if r > TOL_PROJ || !r.is_finite() {
            return Err(Error::OffManifold { residual: r });
        }
        Ok(())
    }

    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.ambient_dim() {
            return Err(invalid("point", format!("expected {} coordinates, got {}", self.ambient_dim(), coords.len())));
        }
        let p = Point::new(vector(coords));
        self.check_point(&p)?;
        Ok(p)
    }

    /// Riemannian inner product of ambient tangent vectors at `x`.
    pub fn inner(&self, x: &Point, a: &Vector, b: &Vector) -> f64 {
        match &self.kind {
            ManifoldKind::ConformalDisk(disk) => {
                let l = disk.lambda(&x.coords);
                l * l * a.dot(b)
            }
            _ => a.dot(b),
        }
    }

    pub fn norm(&self, x: &Point, a: &Vector) -> f64 {
        self.inner(x, a, a).sqrt()
    }

    fn project_unchecked(&self, x: &Point, v: &Vector) -> Vector {
        let mut w = *v;
        for i in self.ambient_dim()..MAX_AMBIENT {
            w[i] = 0.0;
        }
        if self.is_spherical() {
            let n = x.coords.norm_squared();
            w -= x.coords * (w.dot(&x.coords) / n);
        }
        w
    }

    /// Orthogonal projection onto `T_x M`.
    pub fn tangent_project(&self, x: &Point, v: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        Ok(self.project_unchecked(x, v))
    }

    /// Geodesic exponential map. On the sphere family the result is exact;
    /// on conformal disks the geodesic equation is integrated with RK4.
    pub fn exp_map(&self, x: &Point, v: &Vector) -> Point {
        match &self.kind {
            ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. } => Point::new(sphere_exp(&x.coords, v)),
            ManifoldKind::HalfSpace { .. } => Point::new(x.coords + v),
            ManifoldKind::ConformalDisk(disk) => Point::new(disk.geodesic_transport(&x.coords, v, &mut []).0),
        }
    }

    /// Geodesic step together with parallel transport of `frame` along it.
    pub fn exp_transport(&self, x: &Point, v: &Vector, frame: &Frame) -> Result<(Point, Frame)> {
        match &self.kind {
            ManifoldKind::ConformalDisk(disk) => {
                let mut out = *frame;
                let (y, _) = disk.geodesic_transport(&x.coords, v, &mut out.basis[..frame.dim]);
                let y = Point::new(y);
                if disk.phi(&y.coords) <= 0.0 {
                    return Err(Error::StepTooLarge(0));
                }
                self.gram_schmidt(&y, &mut out);
                Ok((y, out))
            }
            _ => {
                let y = self.exp_map(x, v);
                let f = self.parallel_transport(x, &y, frame)?;
                Ok((y, f))
            }
        }
    }

    /// Parallel transport of `frame` from `x` to a nearby `y` along the
    /// connecting geodesic (sphere family: exact rotation in `span{x, y}`).
    pub fn parallel_transport(&self, x: &Point, y: &Point, frame: &Frame) -> Result<Frame> {
        let mut out = *frame;
        match &self.kind {
            ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. } => {
                let (xc, yc) = (&x.coords, &y.coords);
                let c = 1.0 + xc.dot(yc);
                if c < 1e-12 {
                    return Err(Error::DegenerateTransport);
                }
                let s = xc + yc;
                for e in out.basis[..frame.dim].iter_mut() {
                    *e -= s * (e.dot(yc) / c);
                }
                self.gram_schmidt(y, &mut out);
            }
            ManifoldKind::HalfSpace { .. } => {}
            ManifoldKind::ConformalDisk(disk) => {
                disk.segment_transport(&x.coords, &y.coords, &mut out.basis[..frame.dim]);
                self.gram_schmidt(y, &mut out);
            }
        }
        Ok(out)
    }

    /// Projects the frame vectors to `T_x M` and re-orthonormalizes them
    /// (one modified Gram–Schmidt pass in the Riemannian metric).
    pub fn gram_schmidt(&self, x: &Point, frame: &mut Frame) {
        for i in 0..frame.dim {
            let mut v = self.project_unchecked(x, &frame.basis[i]);
            for j in 0..i {
                let e = frame.basis[j];
                v -= e * self.inner(x, &v, &e);
            }
            frame.basis[i] = v / self.norm(x, &v);
        }
    }

    /// An orthonormal frame at `x` obtained from the coordinate directions.
    pub fn default_frame(&self, x: &Point) -> Frame {
        let mut vecs = Vec::with_capacity(MAX_DIM);
        for k in 0..self.ambient_dim() {
            if vecs.len() == self.dim() {
                break;
            }
            let mut v = self.project_unchecked(x, &vector(&{
                let mut e = [0.0; MAX_AMBIENT];
                e[k] = 1.0;
                e
            }));
            for e in &vecs {
                v -= *e * self.inner(x, &v, e);
            }
            let n = self.norm(x, &v);
            if n > 1e-6 {
                vecs.push(v / n);
            }
        }
        Frame::new(&vecs)
    }

    /// Frame whose first vector is the normalized tangent part of `first`.
    pub fn frame_with_first(&self, x: &Point, first: &Vector) -> Frame {
        let base = self.default_frame(x);
        let mut vecs = vec![*first];
        vecs.extend_from_slice(base.vectors());
        let mut f = Frame::new(&vecs[..self.dim()]);
        // replace degenerate directions using the remaining candidates
        let mut candidates = base.vectors().to_vec();
        candidates.reverse();
        loop {
            let mut probe = f;
            self.gram_schmidt(x, &mut probe);
            if probe.vectors().iter().all(|v| v.iter().all(|c| c.is_finite())) && self.frame_defect(x, &probe) < TOL_FRAME {
                return probe;
            }
            let next = candidates.pop().expect("frame completion");
            f = Frame::new(&[&[*first][..], &[next][..], base.vectors()].concat()[..self.dim()]);
        }
    }

    /// `max |⟨eᵢ, eⱼ⟩ − δᵢⱼ|` plus the normal component of the frame vectors.
    pub fn frame_defect(&self, x: &Point, frame: &Frame) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..frame.dim {
            for j in 0..frame.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((self.inner(x, &frame.basis[i], &frame.basis[j]) - target).abs());
            }
            let e = frame.basis[i];
            worst = worst.max((e - self.project_unchecked(x, &e)).norm());
        }
        worst
    }

    /// Frame coordinates `U⁻¹v = (⟨eᵢ, v⟩)ᵢ`.
    pub fn frame_coords(&self, x: &Point, frame: &Frame, v: &Vector) -> FrameVector {
        let mut a = FrameVector::zeros();
        for i in 0..frame.dim {
            a[i] = self.inner(x, &frame.basis[i], v);
        }
        a
    }

    /// Riemannian distance (the base-metric distance on conformal disks).
    pub fn distance(&self, x: &Point, y: &Point) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. } => {
                let c = x.coords.dot(&y.coords).clamp(-1.0, 1.0);
                let s = (x.coords - y.coords * c).norm();
                s.atan2(c)
            }
            ManifoldKind::HalfSpace { .. } => (x.coords - y.coords).norm(),
            ManifoldKind::ConformalDisk(disk) => disk
                .base_geometry()
                .distance(&disk.base_point(&x.coords), &disk.base_point(&y.coords)),
        }
    }

    /// Signed distance to ∂M (positive inside) and the inward unit normal of
    /// the nearest boundary point, transported to `x` along the normal geodesic.
    pub fn boundary_data(&self, x: &Point) -> BoundaryData {
        match &self.kind {
            ManifoldKind::HalfSpace { dim } => {
                let mut n = Vector::zeros();
                n[dim - 1] = 1.0;
                BoundaryData {
                    distance: x.coords[dim - 1],
                    normal: Some(n),
                }
            }
            ManifoldKind::SphericalCap { colatitude } => {
                let c = &x.coords;
                let x3 = c[2].clamp(-1.0, 1.0);
                let th = x3.acos();
                let toward_pole = pole() - c * x3;
                let s = toward_pole.norm();
                let normal = if s > 1e-12 {
                    toward_pole / s
                } else {
                    // at the pole every direction points inward equally; pick e₁
                    self.project_unchecked(x, &vector(&[1.0, 0.0, 0.0])).normalize()
                };
                BoundaryData {
                    distance: colatitude - th,
                    normal: Some(normal),
                }
            }
            _ => BoundaryData {
                distance: f64::INFINITY,
                normal: None,
            },
        }
    }

    pub fn on_boundary(&self, x: &Point) -> bool {
        self.boundary_data(x).distance.abs() <= TOL_BOUNDARY
    }

    /// Mirrors an exterior point back into M along the normal geodesic.
    /// Returns the reflected point and the pushed distance, or `None` when
    /// `y` is already inside.
    pub fn reflect(&self, y: &Point) -> Option<(Point, f64)> {
        match &self.kind {
            ManifoldKind::HalfSpace { dim } => {
                let h = y.coords[dim - 1];
                if h >= 0.0 {
                    return None;
                }
                let mut z = y.coords;
                z[dim - 1] = -h;
                Some((Point::new(z), -2.0 * h))
            }
            ManifoldKind::SphericalCap { .. } => {
                let bd = self.boundary_data(y);
                if bd.distance >= 0.0 {
                    return None;
                }
                let alpha = -2.0 * bd.distance;
                let n = bd.normal.expect("cap normal");
                let z = y.coords * alpha.cos() + n * alpha.sin();
                Some((Point::new(z / z.norm()), alpha))
            }
            _ => None,
        }
    }

    pub fn drift(&self, x: &Point) -> Vector {
        let c = &x.coords;
        match &self.drift {
            Drift::None => Vector::zeros(),
            Drift::LinearPotential { direction, strength } => {
                if self.is_spherical() {
                    (direction - c * direction.dot(c)) * *strength
                } else {
                    self.project_unchecked(x, direction) * *strength
                }
            }
            Drift::QuadraticWell { center, strength } => -(c - center) * *strength,
            Drift::QuarticWell { center, strength } => {
                let r = c - center;
                -r * (strength * r.norm_squared())
            }
        }
    }

    /// Covariant derivative `∇_a Z` at `x`.
    pub fn drift_derivative(&self, x: &Point, a: &Vector) -> Vector {
        let c = &x.coords;
        match &self.drift {
            Drift::None => Vector::zeros(),
            Drift::LinearPotential { direction, strength } => {
                if self.is_spherical() {
                    // Hess⟨a,·⟩ = −⟨a,x⟩ g on the unit sphere
                    a * (-strength * direction.dot(c))
                } else {
                    Vector::zeros()
                }
            }
            Drift::QuadraticWell { strength, .. } => -a * *strength,
            Drift::QuarticWell { center, strength } => {
                let r = c - center;
                -(a * r.norm_squared() + r * (2.0 * r.dot(a))) * *strength
            }
        }
    }

    /// Ricci tensor `Ric(a, b)` at `x`.
    pub fn ricci(&self, x: &Point, a: &Vector, b: &Vector) -> f64 {
        match &self.kind {
            ManifoldKind::Sphere { dim } => (*dim as f64 - 1.0) * a.dot(b),
            ManifoldKind::SphericalCap { .. } => a.dot(b),
            ManifoldKind::HalfSpace { .. } => 0.0,
            ManifoldKind::ConformalDisk(disk) => disk.gaussian_curvature(&x.coords) * self.inner(x, a, b),
        }
    }

    /// Matrix of `Ric_Z` in the frame: `⟨M a, b⟩ = Ric(ua, ub) − ⟨∇_{ua} Z, ub⟩`.
    pub fn ricci_z_matrix(&self, x: &Point, frame: &Frame) -> Mat {
        let d = frame.dim;
        let mut m = Mat::zeros();
        let has_drift = self.drift != Drift::None;
        for j in 0..d {
            let ej = frame.basis[j];
            let dz = if has_drift { self.drift_derivative(x, &ej) } else { Vector::zeros() };
            for i in 0..d {
                let ei = frame.basis[i];
                m[(i, j)] = self.ricci(x, &ej, &ei) - self.inner(x, &dz, &ei);
            }
        }
        m
    }

    /// `‖Ric_Z‖(x) = sup_{|X|=1} |Ric_Z(X, X)|`, from the symmetric part.
    pub fn ricci_z_norm(&self, x: &Point) -> f64 {
        let frame = self.default_frame(x);
        symmetric_part_norm(&self.ricci_z_matrix(x, &frame), frame.dim)
    }

    /// Second fundamental form `𝕀(a, b) = −⟨∇_a N, b⟩` of the boundary through
    /// the nearest boundary point, evaluated on the boundary-tangent parts.
    fn second_form_unchecked(&self, x: &Point, a: &Vector, b: &Vector) -> f64 {
        match &self.kind {
            ManifoldKind::SphericalCap { colatitude } => {
                let n = self.boundary_data(x).normal.expect("cap normal");
                let at = self.project_unchecked(x, a) - n * n.dot(a);
                let bt = self.project_unchecked(x, b) - n * n.dot(b);
                at.dot(&bt) / colatitude.tan()
            }
            _ => 0.0,
        }
    }

    /// Matrix of `𝕀` in a frame at a boundary point:
    /// `⟨𝕀(u)a, b⟩ = 𝕀(ua − ⟨ua,N⟩N, ub − ⟨ub,N⟩N)`.
    pub fn second_form_matrix(&self, x: &Point, frame: &Frame) -> Result<Mat> {
        if !self.has_boundary() {
            return Err(Error::NotOnBoundary { distance: f64::INFINITY });
        }
        let bd = self.boundary_data(x);
        if bd.distance.abs() > TOL_BOUNDARY {
            return Err(Error::NotOnBoundary { distance: bd.distance });
        }
        Ok(self.second_form_matrix_near(x, frame))
    }

    /// As [`Self::second_form_matrix`] for points near ∂M, using the normal
    /// field extended along normal geodesics.
    pub fn second_form_matrix_near(&self, x: &Point, frame: &Frame) -> Mat {
        let mut m = Mat::zeros();
        if !matches!(self.kind, ManifoldKind::SphericalCap { .. }) {
            return m;
        }
        for i in 0..frame.dim {
            for j in 0..frame.dim {
                m[(i, j)] = self.second_form_unchecked(x, &frame.basis[j], &frame.basis[i]);
            }
        }
        m
    }

    /// Projection `P_u = (u⁻¹N)(u⁻¹N)ᵀ` in frame coordinates.
    pub fn normal_projection(&self, x: &Point, frame: &Frame) -> Mat {
        let n = self.boundary_data(x).normal.expect("normal projection needs a boundary");
        let a = self.frame_coords(x, frame, &n);
        a * a.transpose()
    }

    /// Dominating bounds `(K, σ)` equal to the true tensor norms, where they
    /// are known in closed form.
    pub fn exact_bounds(&self) -> Option<CurvatureBounds> {
        let sigma = match &self.kind {
            ManifoldKind::SphericalCap { colatitude } => (1.0 / colatitude.tan()).abs(),
            _ => 0.0,
        };
        let k = match (&self.kind, &self.drift) {
            (ManifoldKind::Sphere { dim }, Drift::None) => BoundFn::Constant(*dim as f64 - 1.0),
            (ManifoldKind::SphericalCap { .. }, Drift::None) => BoundFn::Constant(1.0),
            (ManifoldKind::HalfSpace { .. }, Drift::None) => BoundFn::Constant(0.0),
            (ManifoldKind::HalfSpace { .. }, Drift::LinearPotential { .. }) => BoundFn::Constant(0.0),
            (ManifoldKind::HalfSpace { .. }, Drift::QuadraticWell { strength, .. }) => BoundFn::Constant(strength.abs()),
            (ManifoldKind::HalfSpace { .. }, Drift::QuarticWell { center, strength }) if *strength >= 0.0 => {
                BoundFn::Radial {
                    center: *center,
                    coef: 3.0 * strength,
                    offset: 0.0,
                }
            }
            _ => return None,
        };
        Some(CurvatureBounds {
            k,
            sigma: BoundFn::Constant(sigma),
        })
    }

    /// Ambient feature coordinates used by test functions: the ambient point
    /// itself, or the base point of a conformal chart.
    pub fn feature(&self, x: &Point) -> Vector {
        match &self.kind {
            ManifoldKind::ConformalDisk(disk) => disk.base_point(&x.coords),
            _ => x.coords,
        }
    }

    /// Riemannian gradient of `F ∘ feature` given the ambient gradient of `F`.
    pub fn feature_gradient(&self, x: &Point, ambient_grad: &Vector) -> Vector {
        match &self.kind {
            ManifoldKind::ConformalDisk(disk) => {
                let l = disk.lambda(&x.coords);
                disk.pullback(&x.coords, ambient_grad) / (l * l)
            }
            _ => self.project_unchecked(x, ambient_grad),
        }
    }

    /// Base-manifold geometry seen by conformal factors placed on this manifold.
    pub fn base_geometry(&self) -> BaseGeometry {
        match &self.kind {
            ManifoldKind::Sphere { .. } | ManifoldKind::SphericalCap { .. } => BaseGeometry::Sphere,
            ManifoldKind::HalfSpace { .. } => BaseGeometry::Flat,
            ManifoldKind::ConformalDisk(disk) => disk.base_geometry(),
        }
    }

    /// `(Ric_φ matrix, 𝕀^φ matrix if x ∈ ∂M, φZ)` for the metric `φ⁻²g`.
    pub fn conformal_tensors(
        &self,
        phi: &ConformalFactor,
        x: &Point,
    ) -> Result<(Mat, Option<Mat>, Vector)> {
        let frame = self.default_frame(x);
        let ric = crate::conformal::transformed_curvature(self, phi, x, &frame, crate::conformal::RicciVariant::Classical)?;
        let second = if self.has_boundary() && self.on_boundary(x) {
            Some(crate::conformal::transformed_second_form(self, phi, x, &frame)?)
        } else {
            None
        };
        let value = phi.value(self.base_geometry(), &self.feature(x));
        Ok((ric.matrix, second, self.drift(x) * value))
    }
}

/// Exact sphere exponential map followed by renormalization.
fn sphere_exp(x: &Vector, v: &Vector) -> Vector {
    let t = v.norm();
    if t == 0.0 {
        return *x;
    }
    let y = x * t.cos() + v * (t.sin() / t);
    y / y.norm()
}

/// `max_{|a|=1} |aᵀ M a|` over the first `d` coordinates.
pub fn symmetric_part_norm(m: &Mat, d: usize) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    let block = s.view((0, 0), (d, d)).clone_owned();
    block
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, e| acc.max(e.abs()))
}

/// Spectral norm of the leading `d×d` block.
pub fn operator_norm(m: &Mat, d: usize) -> f64 {
    let block = m.view((0, 0), (d, d)).clone_owned();
    block.singular_values().iter().fold(0.0_f64, |a, s| a.max(*s))
}
