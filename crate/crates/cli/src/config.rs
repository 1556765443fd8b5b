//! Experiment configuration: a TOML document with unknown keys rejected.

use std::path::Path;

use ricprobe_core::conformal::RicciVariant;
use ricprobe_core::geometry::{
    vector, BoundFn, ChartBase, ConformalDisk, ConformalFactor, CurvatureBounds, Cutoff, Drift, ManifoldSpec, Point,
};
use ricprobe_core::pathspace::{self, Combine, CylindricFunction, FeatureFunction};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub manifold: ManifoldBlock,
    pub probe: ProbeBlock,
    #[serde(default)]
    pub run: RunBlock,
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckBlock>,
    #[serde(default)]
    pub conformal: Option<ConformalBlock>,
    /// Bounds whose `μ` short-time limits `local-time` also reports.
    #[serde(default)]
    pub mu: Option<ExplicitBounds>,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifoldKindName {
    Sphere,
    Cap,
    HalfSpace,
    ConformalDisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldBlock {
    pub kind: ManifoldKindName,
    #[serde(default)]
    pub dim: Option<usize>,
    /// Cap colatitude θ₀ in radians.
    #[serde(default)]
    pub colatitude: Option<f64>,
    #[serde(default)]
    pub drift: Option<DriftBlock>,
    /// Chart base and factor for `conformal-disk`.
    #[serde(default)]
    pub chart: Option<ChartBlock>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftKind {
    Linear,
    Quadratic,
    Quartic,
}

/// `linear`: `Z = c·a`; `quadratic`: `Z = −c(x−x₀)`; `quartic`: `Z = −c|x−x₀|²(x−x₀)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftBlock {
    pub kind: DriftKind,
    /// Direction `a` for `linear`, centre `x₀` otherwise.
    pub vector: Vec<f64>,
    pub strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChartBaseName {
    Flat,
    Stereographic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartBlock {
    pub base: ChartBaseName,
    pub factor: FactorBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FactorBlock {
    One,
    Cutoff { center: Vec<f64>, r_in: f64, r_out: f64 },
    Bump { center: Vec<f64>, radius: f64, depth: f64 },
    Gaussian { center: Vec<f64>, rate: f64 },
    Exponential { direction: Vec<f64>, rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeBlock {
    /// Ambient coordinates (chart coordinates on a conformal disk).
    pub point: Vec<f64>,
    /// Test function `x ↦ x_k` (base coordinates on a conformal disk).
    #[serde(default)]
    pub coordinate: usize,
    /// Quartic window radius around the probe; omit for a bare coordinate.
    #[serde(default)]
    pub window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Largest horizon of the dyadic curvature schedule.
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub antithetic: bool,
    /// Paths written by `simulate`.
    #[serde(default = "default_dump")]
    pub dump_paths: usize,
}

fn default_horizon() -> f64 {
    0.5
}
fn default_levels() -> usize {
    6
}
fn default_steps() -> usize {
    64
}
fn default_paths() -> usize {
    10_000
}
fn default_dump() -> usize {
    10
}

impl Default for RunBlock {
    fn default() -> Self {
        Self {
            horizon: default_horizon(),
            t_max: None,
            levels: default_levels(),
            n_steps: default_steps(),
            n_paths: default_paths(),
            workers: None,
            antithetic: false,
            dump_paths: default_dump(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    #[serde(rename = "gradient-1")]
    Gradient1,
    #[serde(rename = "gradient-2")]
    Gradient2,
    PathspaceGradient,
    Poincare,
    Logsobolev,
    TruncatedPoincare,
    TruncatedLogsobolev,
}

/// One named inequality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckBlock {
    pub name: String,
    pub kind: CheckKind,
    /// `"exact"` for the true tensor norms, or explicit `{ k, sigma }`.
    pub bounds: BoundsBlock,
    /// Exponent `p` or `q`.
    #[serde(default = "default_exponent")]
    pub exponent: f64,
    /// Conditioning time `t` (Poincaré) or `t₁` (log-Sobolev).
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub t0: f64,
    #[serde(default)]
    pub function: Option<FunctionBlock>,
    /// Cutoff radii for the truncated checks.
    #[serde(default)]
    pub cutoff: Option<[f64; 2]>,
    /// An expected FAIL; any other verdict is an error.
    #[serde(default)]
    pub negative_control: bool,
    #[serde(default)]
    pub n_paths: Option<usize>,
    #[serde(default)]
    pub cross_check: bool,
}

fn default_exponent() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsBlock {
    Named(BoundsName),
    Explicit(ExplicitBounds),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundsName {
    Exact,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitBounds {
    pub k: f64,
    #[serde(default)]
    pub sigma: f64,
    /// Adds `k_radial·|x − center|²` to `k`.
    #[serde(default)]
    pub k_radial: Option<f64>,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

/// `F(γ) = Σ or Π over slots of (c_i + a_i·γ(t_i))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionBlock {
    pub times: Vec<f64>,
    pub coefficients: Vec<Vec<f64>>,
    #[serde(default)]
    pub offsets: Vec<f64>,
    #[serde(default = "default_combine")]
    pub combine: CombineName,
}

fn default_combine() -> CombineName {
    CombineName::Sum
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineName {
    Sum,
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalBlock {
    /// φ = 1 on `B_{r_in}(probe)`, φ = 0 outside `B_{r_out}(probe)`.
    pub r_in: f64,
    pub r_out: f64,
    #[serde(default = "default_variant")]
    pub variant: VariantName,
}

fn default_variant() -> VariantName {
    VariantName::Classical
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VariantName {
    Classical,
    Printed,
    PrintedSquared,
}

impl From<VariantName> for RicciVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Classical => RicciVariant::Classical,
            VariantName::Printed => RicciVariant::Printed,
            VariantName::PrintedSquared => RicciVariant::PrintedSquared,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<Format> {
    vec![Format::Json]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: default_dir(), formats: default_formats() }
    }
}

fn schema(field: &str, reason: impl Into<String>) -> CliError {
    CliError::Schema { field: field.to_string(), reason: reason.into() }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg = Self::parse(&text)?;
        Ok((cfg, text))
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.manifold()?;
        self.probe_point()?;
        let r = &self.run;
        if !(r.horizon > 0.0) {
            return Err(schema("run.horizon", "must be positive"));
        }
        if r.n_steps == 0 || r.n_paths == 0 {
            return Err(schema("run", "n_steps and n_paths must be positive"));
        }
        if r.levels < 3 {
            return Err(schema("run.levels", "the limit fit needs at least three horizons"));
        }
        for (i, c) in self.checks.iter().enumerate() {
            self.function_for(c).map_err(|e| match e {
                CliError::Schema { field, reason } => schema(&format!("check[{i}].{field}"), reason),
                other => other,
            })?;
        }
        self.mu_bounds()?;
        if let Some(c) = &self.conformal {
            if !(0.0 < c.r_in && c.r_in < c.r_out) {
                return Err(schema("conformal", "need 0 < r_in < r_out"));
            }
        }
        Ok(())
    }

    /// Canonical serialization without the worker count, the input of the
    /// manifest hash.
    pub fn canonical_without_workers(&self) -> String {
        let mut c = self.clone();
        c.run.workers = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn manifold(&self) -> Result<ManifoldSpec, CliError> {
        let b = &self.manifold;
        let base = match b.kind {
            ManifoldKindName::Sphere => ManifoldSpec::sphere(b.dim.unwrap_or(2)),
            ManifoldKindName::HalfSpace => ManifoldSpec::half_space(b.dim.unwrap_or(2)),
            ManifoldKindName::Cap => {
                let th = b.colatitude.ok_or_else(|| schema("manifold.colatitude", "required for a cap"))?;
                ManifoldSpec::spherical_cap(th).map_err(|e| schema("manifold.colatitude", e.to_string()))?
            }
            ManifoldKindName::ConformalDisk => {
                let c = b.chart.as_ref().ok_or_else(|| schema("manifold.chart", "required for a conformal disk"))?;
                let base = match c.base {
                    ChartBaseName::Flat => ChartBase::Flat,
                    ChartBaseName::Stereographic => ChartBase::Stereographic,
                };
                ManifoldSpec::conformal_disk(ConformalDisk::new(base, factor(&c.factor)?))
            }
        };
        base.validate().map_err(|e| schema("manifold", e.to_string()))?;
        match &b.drift {
            None => Ok(base),
            Some(d) => {
                let v = coords("manifold.drift.vector", &d.vector)?;
                let drift = match d.kind {
                    DriftKind::Linear => Drift::LinearPotential { direction: v, strength: d.strength },
                    DriftKind::Quadratic => Drift::QuadraticWell { center: v, strength: d.strength },
                    DriftKind::Quartic => Drift::QuarticWell { center: v, strength: d.strength },
                };
                base.with_drift(drift).map_err(|e| schema("manifold.drift", e.to_string()))
            }
        }
    }

    pub fn probe_point(&self) -> Result<Point, CliError> {
        let m = self.manifold()?;
        m.point(&self.probe.point).map_err(|e| schema("probe.point", e.to_string()))
    }

    pub fn test_feature(&self) -> Result<FeatureFunction, CliError> {
        let x = self.probe_point()?;
        Ok(match self.probe.window {
            Some(radius) => FeatureFunction::Windowed { index: self.probe.coordinate, center: x.coords, radius },
            None => FeatureFunction::Coordinate(self.probe.coordinate),
        })
    }

    pub fn workers(&self, cli: Option<usize>) -> usize {
        cli.or(self.run.workers).unwrap_or(1).max(1)
    }

    pub fn schedule(&self, boundary: bool) -> Vec<f64> {
        let t_max = self.run.t_max.unwrap_or(if boundary { 0.04 } else { 0.08 });
        ricprobe_core::stats::dyadic_schedule(t_max, self.run.levels)
    }

    pub fn bounds_for(&self, c: &CheckBlock) -> Result<CurvatureBounds, CliError> {
        self.bounds(&c.bounds)
    }

    pub fn mu_bounds(&self) -> Result<Option<CurvatureBounds>, CliError> {
        self.mu.as_ref().map(|e| self.bounds(&BoundsBlock::Explicit(e.clone()))).transpose()
    }

    fn bounds(&self, block: &BoundsBlock) -> Result<CurvatureBounds, CliError> {
        let b = match block {
            BoundsBlock::Named(BoundsName::Zero) => CurvatureBounds::zero(),
            BoundsBlock::Named(BoundsName::Exact) => self
                .manifold()?
                .exact_bounds()
                .ok_or_else(|| schema("bounds", "no closed-form tensor norms for this manifold"))?,
            BoundsBlock::Explicit(e) => {
                let k = match e.k_radial {
                    None => BoundFn::Constant(e.k),
                    Some(coef) => {
                        let center = e.center.as_ref().ok_or_else(|| schema("bounds.center", "required with k_radial"))?;
                        BoundFn::Radial { center: coords("bounds.center", center)?, coef, offset: e.k }
                    }
                };
                CurvatureBounds { k, sigma: BoundFn::Constant(e.sigma) }
            }
        };
        b.validate().map_err(|e| schema("bounds", e.to_string()))?;
        Ok(b)
    }

    /// The cylindric functional of a check; defaults to the probe test
    /// function at the run horizon.
    pub fn function_for(&self, c: &CheckBlock) -> Result<CylindricFunction, CliError> {
        let mut f = match &c.function {
            None => CylindricFunction::terminal(self.run.horizon, self.test_feature()?),
            Some(fb) => {
                if fb.coefficients.len() != fb.times.len() {
                    return Err(schema("function.coefficients", "one coefficient vector per time"));
                }
                if !fb.offsets.is_empty() && fb.offsets.len() != fb.times.len() {
                    return Err(schema("function.offsets", "one offset per time, or none"));
                }
                let factors = fb
                    .coefficients
                    .iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let a = coords("function.coefficients", a)?;
                        Ok(FeatureFunction::Linear { a, c: fb.offsets.get(i).copied().unwrap_or(0.0) })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                let combine = match fb.combine {
                    CombineName::Sum => Combine::Sum,
                    CombineName::Product => Combine::Product,
                };
                CylindricFunction::new(fb.times.clone(), factors, combine).map_err(|e| schema("function", e.to_string()))?
            }
        };
        if let Some([r_in, r_out]) = c.cutoff {
            let cut = pathspace::Cutoff::new(self.probe_point()?, r_in, r_out).map_err(|e| schema("cutoff", e.to_string()))?;
            f = f.with_cutoff(cut);
        }
        Ok(f)
    }

    pub fn conformal_factor(&self) -> Result<(ConformalFactor, f64, RicciVariant), CliError> {
        let c = self.conformal.as_ref().ok_or_else(|| schema("conformal", "section required"))?;
        let x = self.probe_point()?;
        Ok((ConformalFactor::Cutoff { center: x.coords, cutoff: Cutoff::new(c.r_in, c.r_out) }, c.r_in, c.variant.into()))
    }
}

fn coords(field: &str, v: &[f64]) -> Result<ricprobe_core::geometry::Vector, CliError> {
    if v.is_empty() || v.len() > 4 {
        return Err(schema(field, "expected 1 to 4 components"));
    }
    Ok(vector(v))
}

fn factor(f: &FactorBlock) -> Result<ConformalFactor, CliError> {
    let field = "manifold.chart.factor";
    Ok(match f {
        FactorBlock::One => ConformalFactor::One,
        FactorBlock::Cutoff { center, r_in, r_out } => {
            ConformalFactor::Cutoff { center: coords(field, center)?, cutoff: Cutoff::new(*r_in, *r_out) }
        }
        FactorBlock::Bump { center, radius, depth } => {
            ConformalFactor::Bump { center: coords(field, center)?, radius: *radius, depth: *depth }
        }
        FactorBlock::Gaussian { center, rate } => ConformalFactor::Gaussian { center: coords(field, center)?, rate: *rate },
        FactorBlock::Exponential { direction, rate } => {
            ConformalFactor::Exponential { direction: coords(field, direction)?, rate: *rate }
        }
    })
}
