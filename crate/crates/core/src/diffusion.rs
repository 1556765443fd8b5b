//! Geodesic Euler–Maruyama simulation of the reflecting diffusion with
//! generator `Δ + Z`, carrying an orthonormal frame by parallel transport.
//!
//! One step proposes `y = exp_x(√2·U·ΔW + Z(x)Δt)`. Exterior proposals are
//! mirrored across ∂M along the normal geodesic; the local-time increment is
//! the total distance pushed back, which is twice the penetration depth. On
//! the half-line this makes the chain `|X + ξ|`, whose law at grid times is
//! exactly that of reflected Brownian motion.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Frame, FrameVector, ManifoldSpec, Point, TOL_FRAME};
use crate::rng::{path_seed, Stream};
use crate::stats::Moments;

pub const MAX_REFLECTIONS: usize = 8;
/// Largest tolerated fraction of discarded paths.
pub const DISCARD_BUDGET: f64 = 1e-3;
/// Ensemble chunk size; fixed so that reductions do not depend on the worker count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub n_steps: usize,
    pub master_seed: u64,
    /// Radius of the ball whose first exit time is recorded (∞ disables it).
    pub exit_radius: f64,
    /// Pair every path with its mirror image `ΔW ↦ −ΔW`.
    pub antithetic: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, n_steps: usize, master_seed: u64) -> Self {
        Self {
            horizon,
            n_steps,
            master_seed,
            exit_radius: f64::INFINITY,
            antithetic: false,
        }
    }

    pub fn with_exit_radius(mut self, r: f64) -> Self {
        self.exit_radius = r;
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", format!("{} is not positive", self.horizon)));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps", "at least one step is required"));
        }
        if !(self.exit_radius > 0.0) {
            return Err(invalid("exit_radius", "must be positive"));
        }
        Ok(())
    }

    /// Knot index of time `t`, which must lie on the grid.
    pub fn knot(&self, t: f64) -> Result<usize> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::TimeOutOfRange { time: t, horizon: self.horizon });
        }
        let k = t / self.dt();
        let r = k.round();
        if (k - r).abs() > 1e-6 {
            return Err(invalid("time", format!("{t} is not a multiple of the step {}", self.dt())));
        }
        Ok(r as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub point: Point,
    pub frame: Frame,
    pub dl: f64,
    /// The proposal left M and was reflected.
    pub hit: bool,
}

/// One step of the scheme from `(x, u)` with Wiener increment `dw`.
pub fn step(m: &ManifoldSpec, x: &Point, u: &Frame, dt: f64, dw: &FrameVector) -> Result<StepOutcome> {
    let v = u.apply(dw) * std::f64::consts::SQRT_2 + m.drift(x) * dt;
    let (mut y, frame) = m.exp_transport(x, &v, u)?;
    if !m.has_boundary() {
        return Ok(StepOutcome { point: y, frame, dl: 0.0, hit: false });
    }
    let mut dl = 0.0;
    let mut reflections = 0;
    while let Some((z, push)) = m.reflect(&y) {
        if reflections == MAX_REFLECTIONS {
            return Err(Error::StepTooLarge(MAX_REFLECTIONS));
        }
        reflections += 1;
        dl += push;
        y = z;
    }
    if reflections == 0 {
        return Ok(StepOutcome { point: y, frame, dl: 0.0, hit: false });
    }
    let frame = m.parallel_transport(x, &y, u)?;
    Ok(StepOutcome { point: y, frame, dl, hit: true })
}

/// Everything known about one step, handed to observers.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    /// The step goes from knot `index` to knot `index + 1`.
    pub index: usize,
    pub dt: f64,
    pub from: &'a Point,
    pub from_frame: &'a Frame,
    pub to: &'a Point,
    pub to_frame: &'a Frame,
    pub dw: &'a FrameVector,
    pub dl: f64,
    pub hit: bool,
}

pub trait Observer {
    fn start(&mut self, _x: &Point, _u: &Frame) {}
    fn step(&mut self, view: &StepView<'_>);
}

impl<A: Observer, B: Observer> Observer for (A, B) {
    fn start(&mut self, x: &Point, u: &Frame) {
        self.0.start(x, u);
        self.1.start(x, u);
    }
    fn step(&mut self, view: &StepView<'_>) {
        self.0.step(view);
        self.1.step(view);
    }
}

/// Observer that only accumulates the local time.
#[derive(Debug, Default, Clone, Copy)]
pub struct LocalTime(pub f64);

impl Observer for LocalTime {
    fn start(&mut self, _: &Point, _: &Frame) {
        self.0 = 0.0;
    }
    fn step(&mut self, view: &StepView<'_>) {
        self.0 += view.dl;
    }
}

/// Observer keeping the terminal state and the driving Brownian motion `W_T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Terminal {
    pub point: Point,
    pub frame: Frame,
    pub wiener: FrameVector,
    pub local_time: f64,
}

impl Default for Terminal {
    fn default() -> Self {
        Self { point: Point::new(Default::default()), frame: Frame::new(&[]), wiener: FrameVector::zeros(), local_time: 0.0 }
    }
}

impl Observer for Terminal {
    fn start(&mut self, x: &Point, u: &Frame) {
        self.point = *x;
        self.frame = *u;
        self.wiener = FrameVector::zeros();
        self.local_time = 0.0;
    }
    fn step(&mut self, view: &StepView<'_>) {
        self.point = *view.to;
        self.frame = *view.to_frame;
        self.wiener += view.dw;
        self.local_time += view.dl;
    }
}

/// Source of Wiener increments for one path.
pub enum Increments<'a> {
    /// Draws from the stream; `sign = −1` gives the antithetic partner.
    Stream { stream: Stream, sign: f64 },
    Fixed(&'a [FrameVector]),
}

/// Runs the scheme, feeding every step to `obs`. Returns the first exit time
/// from `B_r(x)` when `cfg.exit_radius` is finite.
pub fn simulate_observed(
    m: &ManifoldSpec,
    x: &Point,
    u0: &Frame,
    cfg: &SimConfig,
    mut incs: Increments<'_>,
    obs: &mut impl Observer,
) -> Result<Option<f64>> {
    let dt = cfg.dt();
    let sdt = dt.sqrt();
    let d = m.dim();
    let track_exit = cfg.exit_radius.is_finite();
    let mut exited = None;
    let mut pos = *x;
    let mut frame = *u0;
    obs.start(x, u0);
    let mut dw = FrameVector::zeros();
    for k in 0..cfg.n_steps {
        match &mut incs {
            Increments::Stream { stream, sign } => {
                for i in 0..d {
                    dw[i] = *sign * sdt * stream.normal();
                }
            }
            Increments::Fixed(seq) => dw = seq[k],
        }
        let out = step(m, &pos, &frame, dt, &dw)?;
        obs.step(&StepView {
            index: k,
            dt,
            from: &pos,
            from_frame: &frame,
            to: &out.point,
            to_frame: &out.frame,
            dw: &dw,
            dl: out.dl,
            hit: out.hit,
        });
        pos = out.point;
        frame = out.frame;
        if track_exit && exited.is_none() && m.distance(x, &pos) >= cfg.exit_radius {
            exited = Some((k + 1) as f64 * dt);
        }
    }
    Ok(exited)
}

/// A fully recorded path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub frames: Vec<Frame>,
    /// `dw[k]` drives the step from knot `k` to `k+1`.
    pub dw: Vec<FrameVector>,
    pub dl: Vec<f64>,
    /// `hits[k]`: the step into knot `k+1` was reflected.
    pub hits: Vec<bool>,
    pub exited_at: Option<f64>,
    pub path_seed: u64,
}

impl Observer for PathSample {
    fn start(&mut self, x: &Point, u: &Frame) {
        self.times.clear();
        self.points.clear();
        self.frames.clear();
        self.dw.clear();
        self.dl.clear();
        self.hits.clear();
        self.exited_at = None;
        self.times.push(0.0);
        self.points.push(*x);
        self.frames.push(*u);
    }

    fn step(&mut self, v: &StepView<'_>) {
        self.times.push((v.index + 1) as f64 * v.dt);
        self.points.push(*v.to);
        self.frames.push(*v.to_frame);
        self.dw.push(*v.dw);
        self.dl.push(v.dl);
        self.hits.push(v.hit);
    }
}

impl PathSample {
    pub fn n_steps(&self) -> usize {
        self.dw.len()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    pub fn dt(&self) -> f64 {
        self.horizon() / self.n_steps().max(1) as f64
    }

    pub fn local_time(&self) -> f64 {
        self.dl.iter().sum()
    }

    pub fn terminal(&self) -> (&Point, &Frame) {
        (self.points.last().expect("empty path"), self.frames.last().expect("empty path"))
    }

    /// `W_{t_k}` as the sum of increments up to knot `k`.
    pub fn wiener_at(&self, k: usize) -> FrameVector {
        self.dw[..k].iter().fold(FrameVector::zeros(), |a, b| a + b)
    }

    /// Worst frame defect over all knots.
    pub fn max_frame_defect(&self, m: &ManifoldSpec) -> f64 {
        self.points
            .iter()
            .zip(&self.frames)
            .map(|(p, f)| m.frame_defect(p, f))
            .fold(0.0, f64::max)
    }
}

fn check_start(m: &ManifoldSpec, x: &Point, u0: &Frame) -> Result<()> {
    m.check_point(x)?;
    if u0.dim != m.dim() {
        return Err(invalid("frame", format!("expected {} vectors, got {}", m.dim(), u0.dim)));
    }
    let defect = m.frame_defect(x, u0);
    if defect > TOL_FRAME {
        return Err(invalid("frame", format!("not orthonormal at the start (defect {defect:.2e})")));
    }
    Ok(())
}

/// Simulates path `index` of the ensemble keyed by `cfg.master_seed` into `out`.
pub fn simulate_into(
    m: &ManifoldSpec,
    x: &Point,
    u0: &Frame,
    cfg: &SimConfig,
    index: u64,
    sign: f64,
    out: &mut PathSample,
) -> Result<()> {
    let seed = path_seed(cfg.master_seed, index);
    let exited = simulate_observed(m, x, u0, cfg, Increments::Stream { stream: Stream::from_seed(seed), sign }, out)?;
    out.exited_at = exited;
    out.path_seed = seed;
    Ok(())
}

pub fn simulate(m: &ManifoldSpec, x: &Point, u0: &Frame, cfg: &SimConfig, index: u64) -> Result<PathSample> {
    cfg.validate()?;
    check_start(m, x, u0)?;
    let mut p = PathSample::default();
    simulate_into(m, x, u0, cfg, index, 1.0, &mut p)?;
    Ok(p)
}

/// Path driven by a prescribed increment sequence.
pub fn simulate_with_increments(
    m: &ManifoldSpec,
    x: &Point,
    u0: &Frame,
    cfg: &SimConfig,
    increments: &[FrameVector],
) -> Result<PathSample> {
    cfg.validate()?;
    check_start(m, x, u0)?;
    if increments.len() != cfg.n_steps {
        return Err(invalid("increments", "one increment per step is required"));
    }
    let mut p = PathSample::default();
    p.exited_at = simulate_observed(m, x, u0, cfg, Increments::Fixed(increments), &mut p)?;
    Ok(p)
}

/// Two paths from different starts driven by the same increments.
pub fn simulate_coupled(
    m: &ManifoldSpec,
    starts: (&Point, &Point),
    frames: (&Frame, &Frame),
    cfg: &SimConfig,
    index: u64,
) -> Result<(PathSample, PathSample)> {
    Ok((simulate(m, starts.0, frames.0, cfg, index)?, simulate(m, starts.1, frames.1, cfg, index)?))
}

/// An ensemble of paths sharing manifold, start, frame and configuration.
/// Paths are generated on demand from their index; nothing is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub manifold: ManifoldSpec,
    pub start: Point,
    pub frame: Frame,
    pub config: SimConfig,
}

/// Worker-local state handed to per-unit closures.
#[derive(Default)]
pub struct Scratch {
    pub path: PathSample,
    pub aux: PathSample,
    pub buf: Vec<f64>,
}

impl Ensemble {
    pub fn new(manifold: ManifoldSpec, start: Point, frame: Frame, config: SimConfig) -> Result<Self> {
        config.validate()?;
        check_start(&manifold, &start, &frame)?;
        Ok(Self { manifold, start, frame, config })
    }

    /// With the default frame at the start.
    pub fn at(manifold: ManifoldSpec, start: Point, config: SimConfig) -> Result<Self> {
        let frame = manifold.default_frame(&start);
        Self::new(manifold, start, frame, config)
    }

    pub fn with_config(&self, config: SimConfig) -> Result<Self> {
        Self::new(self.manifold.clone(), self.start, self.frame, config)
    }

    /// Number of independent sampling units for `n_paths` paths.
    pub fn units(&self, n_paths: usize) -> usize {
        if self.config.antithetic {
            n_paths.div_ceil(2)
        } else {
            n_paths
        }
    }

    pub fn path(&self, index: u64) -> Result<PathSample> {
        simulate(&self.manifold, &self.start, &self.frame, &self.config, index)
    }

    pub fn simulate_into(&self, index: u64, sign: f64, out: &mut PathSample) -> Result<()> {
        simulate_into(&self.manifold, &self.start, &self.frame, &self.config, index, sign, out)
    }

    /// Observer-driven simulation of path `index`.
    pub fn observe(&self, index: u64, sign: f64, obs: &mut impl Observer) -> Result<Option<f64>> {
        let stream = Stream::from_seed(path_seed(self.config.master_seed, index));
        simulate_observed(&self.manifold, &self.start, &self.frame, &self.config, Increments::Stream { stream, sign }, obs)
    }

    /// Materializes all paths (small ensembles only).
    pub fn materialize(&self, n_paths: usize) -> Result<Vec<PathSample>> {
        (0..n_paths as u64).map(|i| self.path(i)).collect()
    }

    /// Deterministic parallel reduction. `per_path(index, sign, scratch, out)`
    /// writes `dim` statistics of one path; antithetic partners are averaged
    /// into one sample. Paths whose simulation fails are discarded and
    /// counted; exceeding [`DISCARD_BUDGET`] is an error.
    pub fn reduce<F>(&self, n_paths: usize, workers: usize, dim: usize, per_path: F) -> Result<Moments>
    where
        F: Fn(u64, f64, &mut Scratch, &mut [f64]) -> Result<()> + Sync,
    {
        if n_paths == 0 {
            return Err(Error::EmptyEnsemble);
        }
        let units = self.units(n_paths);
        let pair = self.config.antithetic;
        let n_chunks = units.div_ceil(CHUNK);
        let fatal = AtomicUsize::new(0);
        let run_chunk = |c: usize, scratch: &mut Scratch| -> Moments {
            let mut acc = Moments::new(dim);
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            for u in c * CHUNK..((c + 1) * CHUNK).min(units) {
                let idx = u as u64;
                let first = per_path(idx, 1.0, scratch, &mut a);
                let res = match (first, pair) {
                    (Ok(()), false) => Ok(1),
                    (Ok(()), true) => per_path(idx, -1.0, scratch, &mut b).map(|_| {
                        for i in 0..dim {
                            a[i] = 0.5 * (a[i] + b[i]);
                        }
                        2
                    }),
                    (Err(e), _) => Err(e),
                };
                match res {
                    Ok(paths) => acc.push(&a, paths),
                    Err(Error::StepTooLarge(_)) | Err(Error::DegenerateTransport) => {
                        acc.discarded += if pair { 2 } else { 1 };
                    }
                    Err(_) => {
                        fatal.fetch_add(1, Ordering::Relaxed);
                    }
                }
            }
            acc
        };
        let parts: Vec<Moments> = if workers <= 1 {
            let mut scratch = Scratch::default();
            (0..n_chunks).map(|c| run_chunk(c, &mut scratch)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| invalid("workers", e.to_string()))?;
            pool.install(|| {
                (0..n_chunks)
                    .into_par_iter()
                    .map_init(Scratch::default, |s, c| run_chunk(c, s))
                    .collect()
            })
        };
        if fatal.load(Ordering::Relaxed) > 0 {
            // rerun the first failing path serially to surface its error
            let mut scratch = Scratch::default();
            let mut out = vec![0.0; dim];
            for u in 0..units as u64 {
                if let Err(e) = per_path(u, 1.0, &mut scratch, &mut out) {
                    if !matches!(e, Error::StepTooLarge(_) | Error::DegenerateTransport) {
                        return Err(e);
                    }
                }
                if pair {
                    if let Err(e) = per_path(u, -1.0, &mut scratch, &mut out) {
                        if !matches!(e, Error::StepTooLarge(_) | Error::DegenerateTransport) {
                            return Err(e);
                        }
                    }
                }
            }
        }
        let mut total = Moments::new(dim);
        for p in &parts {
            total.merge(p);
        }
        let attempted = total.n_paths + total.discarded;
        if total.discarded as f64 > DISCARD_BUDGET * attempted as f64 {
            return Err(Error::DiscardBudget { discarded: total.discarded, total: attempted });
        }
        if total.n == 0 {
            return Err(Error::EmptyEnsemble);
        }
        Ok(total)
    }

    /// [`Self::reduce`] over fully recorded paths.
    pub fn reduce_paths<F>(&self, n_paths: usize, workers: usize, dim: usize, per_path: F) -> Result<Moments>
    where
        F: Fn(&PathSample, &mut Scratch, &mut [f64]) -> Result<()> + Sync,
    {
        self.reduce(n_paths, workers, dim, |idx, sign, scratch, out| {
            let mut path = std::mem::take(&mut scratch.path);
            let res = self
                .simulate_into(idx, sign, &mut path)
                .and_then(|_| per_path(&path, scratch, out));
            scratch.path = path;
            res
        })
    }
}

/// Header written next to a path dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format_version: u32,
    pub manifold: ManifoldSpec,
    pub start: Point,
    pub config: SimConfig,
    pub n_paths: usize,
    pub columns: Vec<String>,
}

/// Columnar CSV of `(path, knot, time, x₀..x_{n−1}, dl)`; `dl` at knot `k`
/// is the local time gained on the step into `k` (0 at the start).
pub fn write_path_dump(ens: &Ensemble, n_paths: usize, csv: &mut impl Write, header: &mut impl Write) -> Result<()> {
    let n = ens.manifold.ambient_dim();
    let mut columns = vec!["path".to_string(), "knot".into(), "time".into()];
    columns.extend((0..n).map(|i| format!("x{i}")));
    columns.push("dl".into());
    let io = |e: std::io::Error| invalid("output", e.to_string());
    writeln!(csv, "{}", columns.join(",")).map_err(io)?;
    let mut p = PathSample::default();
    for i in 0..n_paths as u64 {
        ens.simulate_into(i, 1.0, &mut p)?;
        for k in 0..p.points.len() {
            let mut line = format!("{i},{k},{:.17e}", p.times[k]);
            for c in 0..n {
                line.push_str(&format!(",{:.17e}", p.points[k].coords[c]));
            }
            let dl = if k == 0 { 0.0 } else { p.dl[k - 1] };
            line.push_str(&format!(",{dl:.17e}"));
            writeln!(csv, "{line}").map_err(io)?;
        }
    }
    let h = DumpHeader {
        format_version: 1,
        manifold: ens.manifold.clone(),
        start: ens.start,
        config: ens.config,
        n_paths,
        columns,
    };
    serde_json::to_writer_pretty(&mut *header, &h).map_err(|e| invalid("output", e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::vector;

    #[test]
    fn zero_noise_zero_drift_is_stationary() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[0.0, 0.6, 0.8]).unwrap();
        let u = m.default_frame(&x);
        let out = step(&m, &x, &u, 0.01, &FrameVector::zeros()).unwrap();
        assert_eq!(out.point, x);
        assert_eq!(out.dl, 0.0);
        let cfg = SimConfig::new(0.1, 1, 0);
        let p = simulate_with_increments(&m, &x, &u, &cfg, &[FrameVector::zeros()]).unwrap();
        assert_eq!(p.points, vec![x, x]);
    }

    #[test]
    fn half_line_reflection_oracle() {
        let m = ManifoldSpec::half_space(1);
        let x = m.point(&[0.01]).unwrap();
        let u = m.default_frame(&x);
        // √2·ΔW = −0.04 lands at −0.03
        let dw = FrameVector::new(-0.04 / std::f64::consts::SQRT_2, 0.0, 0.0);
        let out = step(&m, &x, &u, 1e-4, &dw).unwrap();
        assert!((out.point.coords[0] - 0.03).abs() < 1e-15);
        assert!((out.dl - 0.06).abs() < 1e-15);
        assert!(out.hit);
    }

    #[test]
    fn interior_step_matches_boundaryless_scheme() {
        let cap = ManifoldSpec::spherical_cap(1.0).unwrap();
        let s2 = ManifoldSpec::sphere(2);
        let x = cap.point(&[0.0, 0.0, 1.0]).unwrap();
        let u = cap.default_frame(&x);
        let dw = FrameVector::new(0.01, -0.02, 0.0);
        let a = step(&cap, &x, &u, 1e-3, &dw).unwrap();
        let b = step(&s2, &x, &u, 1e-3, &dw).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_flat_paths_differ_by_constant() {
        let m = ManifoldSpec::half_space(2);
        let a = m.point(&[0.0, 5.0]).unwrap();
        let b = m.point(&[0.3, 5.2]).unwrap();
        let u = m.default_frame(&a);
        let cfg = SimConfig::new(0.1, 20, 3);
        let (p, q) = simulate_coupled(&m, (&a, &b), (&u, &u), &cfg, 7).unwrap();
        for (x, y) in p.points.iter().zip(&q.points) {
            assert!((y.coords - x.coords - (b.coords - a.coords)).norm() < 1e-13);
        }
        let (p2, q2) = simulate_coupled(&m, (&a, &a), (&u, &u), &cfg, 7).unwrap();
        assert_eq!(p2, q2);
    }

    #[test]
    fn boundaryless_paths_have_no_local_time_and_orthonormal_frames() {
        let m = ManifoldSpec::sphere(3);
        let x = m.point(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let ens = Ensemble::at(m.clone(), x, SimConfig::new(0.5, 100, 11)).unwrap();
        for p in ens.materialize(20).unwrap() {
            assert_eq!(p.local_time(), 0.0);
            assert!(p.max_frame_defect(&m) < 1e-8);
        }
    }

    #[test]
    fn local_time_only_near_boundary() {
        let m = ManifoldSpec::spherical_cap(1.0).unwrap();
        let x = m.point(&[1.0f64.sin(), 0.0, 1.0f64.cos()]).unwrap();
        let cfg = SimConfig::new(0.05, 50, 5);
        let ens = Ensemble::at(m.clone(), x, cfg).unwrap();
        let scale = 4.0 * (2.0 * 2.0 * cfg.dt()).sqrt();
        for p in ens.materialize(50).unwrap() {
            for k in 0..p.n_steps() {
                if p.dl[k] > 0.0 {
                    assert!(m.boundary_data(&p.points[k]).distance <= scale);
                }
            }
            assert!(p.max_frame_defect(&m) < 1e-8);
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[0.0, 0.0, 1.0]).unwrap();
        let ens = Ensemble::at(m, x, SimConfig::new(0.2, 20, 99).with_antithetic(true)).unwrap();
        let stat = |p: &PathSample, _: &mut Scratch, out: &mut [f64]| {
            out[0] = p.terminal().0.coords[2];
            out[1] = out[0] * out[0];
            Ok(())
        };
        let a = ens.reduce_paths(1000, 1, 2, stat).unwrap();
        let b = ens.reduce_paths(1000, 4, 2, stat).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n, 500);
        assert_eq!(a.n_paths, 1000);
    }

    #[test]
    fn path_dump_is_reproducible() {
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[0.0, 0.0, 1.0]).unwrap();
        let ens = Ensemble::at(m, x, SimConfig::new(0.1, 10, 1)).unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut h = Vec::new();
        write_path_dump(&ens, 3, &mut a, &mut h).unwrap();
        write_path_dump(&ens, 3, &mut b, &mut Vec::new()).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 11);
        let header: serde_json::Value = serde_json::from_slice(&h).unwrap();
        assert_eq!(header["n_paths"], 3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SimConfig::new(0.0, 10, 0).validate().is_err());
        assert!(SimConfig::new(1.0, 0, 0).validate().is_err());
        let m = ManifoldSpec::sphere(2);
        let x = m.point(&[0.0, 0.0, 1.0]).unwrap();
        let bad = Frame::new(&[vector(&[1.0, 0.0, 0.0]), vector(&[1.0, 0.0, 0.0])]);
        assert!(Ensemble::new(m, x, bad, SimConfig::new(1.0, 10, 0)).is_err());
    }
}
