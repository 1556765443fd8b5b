//! Subcommand implementations. Each returns the exit code it wants, after
//! writing its reports and recording them in the manifest.

use std::path::Path;

use ricprobe_core::conformal::{locality_experiment, transformed_curvature};
use ricprobe_core::diffusion::{write_path_dump, Ensemble, LocalTime, SimConfig, Terminal};
use ricprobe_core::estimators::{
    exponential_moment, mu_limits, ricci_estimate, second_form_estimate, CurvatureParams, CurvatureReport, TestFunction,
};
use ricprobe_core::inequalities::{
    check_gradient_ineq_1, check_gradient_ineq_2, check_logsobolev, check_pathspace_gradient, check_poincare,
    check_truncated, CheckParams, InequalityReport, TruncatedMode, Verdict,
};
use ricprobe_core::rng::mix64;
use ricprobe_core::stats::LimitMode;
use serde::Serialize;

use crate::config::{CheckBlock, CheckKind, ExperimentConfig, Format};
use crate::output::{write_atomic, write_csv, write_json, RunManifest};
use crate::CliError;

pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub dir: &'a Path,
    pub workers: usize,
    pub formats: &'a [Format],
}

impl Context<'_> {
    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn config(&self, horizon: f64) -> SimConfig {
        SimConfig::new(horizon, self.cfg.run.n_steps, self.cfg.master_seed).with_antithetic(self.cfg.run.antithetic)
    }

    fn curvature_params(&self, boundary: bool) -> CurvatureParams {
        CurvatureParams {
            schedule: self.cfg.schedule(boundary),
            n_paths: self.cfg.run.n_paths,
            n_steps: self.cfg.run.n_steps,
            seed: self.cfg.master_seed,
            workers: self.workers,
            antithetic: self.cfg.run.antithetic,
        }
    }
}

#[derive(Serialize)]
struct SimulateSummary {
    n_paths: usize,
    discarded: usize,
    horizon: f64,
    n_steps: usize,
    mean_local_time: ricprobe_core::stats::McEstimate,
    /// `P_T f(x)` for the probe test function.
    mean_test_function: ricprobe_core::stats::McEstimate,
    dumped_paths: usize,
}

pub fn simulate(ctx: &Context, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let m = ctx.cfg.manifold()?;
    let x = ctx.cfg.probe_point()?;
    let f = ctx.cfg.test_feature()?;
    let ens = Ensemble::at(m.clone(), x, ctx.config(ctx.cfg.run.horizon))?;
    let n = ctx.cfg.run.n_paths;
    let mom = ens.reduce(n, ctx.workers, 2, |i, sign, _, out| {
        let mut obs = (LocalTime(0.0), Terminal::default());
        ens.observe(i, sign, &mut obs)?;
        out[0] = obs.0 .0;
        out[1] = f.value(&m, &obs.1.point);
        Ok(())
    })?;
    manifest.count(mom.n_paths, mom.discarded);
    let dumped = ctx.cfg.run.dump_paths.min(n);
    if ctx.wants(Format::Csv) && dumped > 0 {
        let (mut csv, mut header) = (Vec::new(), Vec::new());
        write_path_dump(&ens, dumped, &mut csv, &mut header)?;
        let p = ctx.dir.join("paths.csv");
        write_atomic(&p, &csv)?;
        manifest.record(ctx.dir, &p);
        let h = ctx.dir.join("paths.header.json");
        write_atomic(&h, &header)?;
        manifest.record(ctx.dir, &h);
    }
    let summary = SimulateSummary {
        n_paths: mom.n_paths,
        discarded: mom.discarded,
        horizon: ens.config.horizon,
        n_steps: ens.config.n_steps,
        mean_local_time: mom.component(0),
        mean_test_function: mom.component(1),
        dumped_paths: if ctx.wants(Format::Csv) { dumped } else { 0 },
    };
    println!(
        "P_T f = {:.6} ± {:.6}, E l_T = {:.6} ± {:.6}",
        summary.mean_test_function.value,
        summary.mean_test_function.ci,
        summary.mean_local_time.value,
        summary.mean_local_time.ci
    );
    let p = ctx.dir.join("simulate.json");
    write_json(&p, &summary)?;
    manifest.record(ctx.dir, &p);
    Ok(0)
}

fn curvature_outputs(ctx: &Context, manifest: &mut RunManifest, stem: &str, r: &CurvatureReport) -> Result<(), CliError> {
    for p in &r.points {
        manifest.count(p.gradient.n_paths, p.gradient.discarded);
    }
    if ctx.wants(Format::Json) {
        let p = ctx.dir.join(format!("{stem}.json"));
        write_json(&p, r)?;
        manifest.record(ctx.dir, &p);
    }
    if ctx.wants(Format::Csv) {
        let rows: Vec<Vec<String>> = r
            .points
            .iter()
            .map(|p| {
                [p.t, p.gradient.value, p.gradient.ci, p.gradient_p1.value, p.gradient_p1.ci, p.variance.value, p.variance.ci]
                    .iter()
                    .map(|v| format!("{v:.17e}"))
                    .collect()
            })
            .collect();
        let p = ctx.dir.join(format!("{stem}_points.csv"));
        write_csv(
            &p,
            &["t", "gradient", "gradient_ci", "gradient_p1", "gradient_p1_ci", "variance", "variance_ci"],
            &rows,
        )?;
        manifest.record(ctx.dir, &p);
    }
    Ok(())
}

pub fn curvature(ctx: &Context, manifest: &mut RunManifest, boundary: bool) -> Result<i32, CliError> {
    let m = ctx.cfg.manifold()?;
    let tf = TestFunction::certify(&m, ctx.cfg.test_feature()?, ctx.cfg.probe_point()?)?;
    let params = ctx.curvature_params(boundary);
    let (stem, r) = if boundary {
        ("second_form", second_form_estimate(&m, &tf, &params)?)
    } else {
        ("curvature", ricci_estimate(&m, &tf, &params)?)
    };
    curvature_outputs(ctx, manifest, stem, &r)?;
    println!("{stem}: {:.6} ± {:.6}", r.estimate.value, r.estimate.ci);
    Ok(0)
}

fn run_check(ctx: &Context, c: &CheckBlock, index: usize) -> Result<InequalityReport, CliError> {
    let cfg = ctx.cfg;
    let m = cfg.manifold()?;
    let x = cfg.probe_point()?;
    let bounds = cfg.bounds_for(c)?;
    let f = cfg.function_for(c)?;
    let seed = mix64(cfg.master_seed ^ mix64(index as u64 + 1));
    let mut params = CheckParams::new(c.n_paths.unwrap_or(cfg.run.n_paths), cfg.run.n_steps, seed).with_workers(ctx.workers);
    params.antithetic = cfg.run.antithetic;
    params.cross_check = c.cross_check;
    let horizon = f.horizon();
    let terminal = |f: &ricprobe_core::pathspace::CylindricFunction| -> Result<_, CliError> {
        if f.times.len() != 1 {
            return Err(CliError::Schema { field: format!("check[{index}].function"), reason: "a single time slot is required".into() });
        }
        Ok(f.factors[0].clone())
    };
    let report = match c.kind {
        CheckKind::Gradient1 => check_gradient_ineq_1(&m, &x, &terminal(&f)?, horizon, c.exponent, &bounds, &params)?,
        CheckKind::Gradient2 => check_gradient_ineq_2(&m, &x, &terminal(&f)?, horizon, c.exponent, &bounds, &params)?,
        CheckKind::PathspaceGradient => check_pathspace_gradient(&m, &x, &f, c.exponent, &bounds, &params)?,
        CheckKind::Poincare => check_poincare(&m, &x, &f, c.t.unwrap_or(horizon), &bounds, &params)?,
        CheckKind::Logsobolev => check_logsobolev(&m, &x, &f, c.t0, c.t.unwrap_or(horizon), &bounds, &params)?,
        CheckKind::TruncatedPoincare => check_truncated(&m, &x, &f, TruncatedMode::Poincare, &bounds, &params)?,
        CheckKind::TruncatedLogsobolev => check_truncated(&m, &x, &f, TruncatedMode::LogSobolev, &bounds, &params)?,
    };
    Ok(report)
}

#[derive(Serialize)]
struct NamedReport<'a> {
    name: &'a str,
    negative_control: bool,
    expected: Verdict,
    #[serde(flatten)]
    report: &'a InequalityReport,
}

pub fn check(ctx: &Context, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let mut rows = Vec::new();
    let mut unexpected = 0;
    for (i, c) in ctx.cfg.checks.iter().enumerate() {
        let r = run_check(ctx, c, i)?;
        manifest.count(r.margin.n_paths, r.margin.discarded);
        let expected = if c.negative_control { Verdict::Fail } else { Verdict::Pass };
        let bad = if c.negative_control { r.verdict != Verdict::Fail } else { r.verdict == Verdict::Fail };
        if bad {
            unexpected += 1;
        }
        println!("{}: {} (margin {:.6} ± {:.6})", c.name, r.verdict, r.margin.value, r.margin.ci);

        let f = ctx.cfg.function_for(c)?;
        let bounds = ctx.cfg.bounds_for(c)?;
        let ens = Ensemble::at(ctx.cfg.manifold()?, ctx.cfg.probe_point()?, ctx.config(f.horizon()))?;
        let em = exponential_moment(&ens, &bounds, 0.1, c.n_paths.unwrap_or(ctx.cfg.run.n_paths).min(10_000), ctx.workers)?;
        manifest.exponential_moments.insert(c.name.clone(), serde_json::to_value(em).map_err(crate::output::io)?);

        let p = ctx.dir.join(format!("check_{}.json", sanitize(&c.name)));
        write_json(&p, &NamedReport { name: &c.name, negative_control: c.negative_control, expected, report: &r })?;
        manifest.record(ctx.dir, &p);
        let num = |v: f64| format!("{v:.17e}");
        rows.push(vec![
            c.name.clone(),
            r.name.clone(),
            r.verdict.to_string(),
            expected.to_string(),
            num(r.lhs.value),
            num(r.lhs.ci),
            num(r.rhs.value),
            num(r.rhs.ci),
            num(r.margin.value),
            num(r.margin.ci),
            num(r.correction),
            r.margin.n_paths.to_string(),
            r.margin.discarded.to_string(),
        ]);
    }
    let p = ctx.dir.join("checks.csv");
    write_csv(
        &p,
        &[
            "name", "check", "verdict", "expected", "lhs", "lhs_ci", "rhs", "rhs_ci", "margin", "margin_ci", "correction",
            "n_paths", "discarded",
        ],
        &rows,
    )?;
    manifest.record(ctx.dir, &p);
    Ok(if unexpected > 0 { 1 } else { 0 })
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[derive(Serialize)]
struct ConformalOutput {
    variant: String,
    /// Transformed minus base Ricci matrix at the probe; zero where φ ≡ 1.
    formula_difference: f64,
    locality: ricprobe_core::conformal::LocalityReport,
}

pub fn conformal(ctx: &Context, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let m = ctx.cfg.manifold()?;
    let x = ctx.cfg.probe_point()?;
    let (phi, r_in, variant) = ctx.cfg.conformal_factor()?;
    let frame = m.default_frame(&x);
    let t = transformed_curvature(&m, &phi, &x, &frame, variant)?;
    let formula_difference = (t.matrix - m.ricci_z_matrix(&x, &frame)).abs().max();
    let loc = locality_experiment(&m, &x, &phi, r_in, ctx.cfg.probe.coordinate, &ctx.curvature_params(false))?;
    for r in [&loc.base, &loc.conformal] {
        for p in &r.points {
            manifest.count(p.gradient.n_paths, p.gradient.discarded);
        }
    }
    println!(
        "base {:.6} ± {:.6}, conformal {:.6} ± {:.6}, agree: {}",
        loc.base.estimate.value, loc.base.estimate.ci, loc.conformal.estimate.value, loc.conformal.estimate.ci, loc.agree
    );
    let agree = loc.agree;
    let p = ctx.dir.join("conformal.json");
    write_json(&p, &ConformalOutput { variant: format!("{variant:?}"), formula_difference, locality: loc })?;
    manifest.record(ctx.dir, &p);
    Ok(if agree && formula_difference == 0.0 { 0 } else { 1 })
}

#[derive(Serialize)]
struct LocalTimeOutput {
    horizon: f64,
    n_steps: usize,
    on_boundary: bool,
    mean: ricprobe_core::stats::McEstimate,
    second_moment: ricprobe_core::stats::McEstimate,
    /// `2√T/√π`, the leading term for a boundary start.
    reference: Option<f64>,
    /// `𝔼μ/T → K(x)` inside, `𝔼μ/√T → 2σ(x)/√π` from the boundary.
    mu: Option<ricprobe_core::estimators::MuLimits>,
}

pub fn local_time(ctx: &Context, manifest: &mut RunManifest) -> Result<i32, CliError> {
    let m = ctx.cfg.manifold()?;
    let x = ctx.cfg.probe_point()?;
    let on_boundary = m.has_boundary() && m.on_boundary(&x);
    let t = ctx.cfg.run.horizon;
    let ens = Ensemble::at(m, x, ctx.config(t))?;
    let mom = ens.reduce(ctx.cfg.run.n_paths, ctx.workers, 2, |i, sign, _, out| {
        let mut lt = LocalTime(0.0);
        ens.observe(i, sign, &mut lt)?;
        out[0] = lt.0;
        out[1] = lt.0 * lt.0;
        Ok(())
    })?;
    manifest.count(mom.n_paths, mom.discarded);
    let mu = match ctx.cfg.mu_bounds()? {
        None => None,
        Some(b) => {
            let mode = if on_boundary { LimitMode::Boundary } else { LimitMode::Interior };
            let r = mu_limits(&ens.manifold, &x, &b, mode, &ctx.curvature_params(on_boundary))?;
            println!("mu limit: {:.6} ± {:.6}", r.first.intercept.value, r.first.intercept.ci);
            Some(r)
        }
    };
    let out = LocalTimeOutput {
        horizon: t,
        n_steps: ens.config.n_steps,
        on_boundary,
        mean: mom.component(0),
        second_moment: mom.component(1),
        reference: on_boundary.then(|| 2.0 * t.sqrt() / std::f64::consts::PI.sqrt()),
        mu,
    };
    println!("E l_T = {:.6} ± {:.6}", out.mean.value, out.mean.ci);
    if ctx.wants(Format::Json) {
        let p = ctx.dir.join("local_time.json");
        write_json(&p, &out)?;
        manifest.record(ctx.dir, &p);
    }
    if ctx.wants(Format::Csv) {
        let p = ctx.dir.join("local_time.csv");
        let num = |v: f64| format!("{v:.17e}");
        write_csv(
            &p,
            &["horizon", "n_steps", "mean", "mean_ci", "second_moment", "second_moment_ci", "reference"],
            &[vec![
                num(t),
                out.n_steps.to_string(),
                num(out.mean.value),
                num(out.mean.ci),
                num(out.second_moment.value),
                num(out.second_moment.ci),
                out.reference.map(num).unwrap_or_default(),
            ]],
        )?;
        manifest.record(ctx.dir, &p);
    }
    Ok(0)
}
