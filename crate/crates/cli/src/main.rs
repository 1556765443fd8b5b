//! `ricprobe`: run curvature probes and inequality checks from a TOML config.
//!
//! Exit codes: 0 success, 1 an unexpected verdict (a FAIL outside the
//! declared negative controls, or a negative control that did not FAIL),
//! 2 configuration or usage error, 3 runtime error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::Context;
use crate::config::{ExperimentConfig, Format};
use crate::output::RunManifest;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config error in `{field}`: {reason}")]
    Schema { field: String, reason: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] ricprobe_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Parse(_) | CliError::Schema { .. } | CliError::Usage(_) => 2,
            CliError::Io(_) | CliError::Core(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ricprobe", version, about = "Monte Carlo curvature probes and path-space inequality checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "RICPROBE_WORKERS")]
    workers: Option<usize>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format; overrides `output.formats`.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate the ensemble; `--format csv` dumps paths.
    Simulate,
    /// Ricci extraction at an interior probe.
    Curvature,
    /// Second fundamental form at a boundary probe.
    SecondForm,
    /// Run the `[[check]]` list.
    Check,
    /// Locality experiment for the `[conformal]` cutoff factor.
    Conformal,
    /// Boundary local-time moments.
    LocalTime,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Curvature => "curvature",
            Command::SecondForm => "second-form",
            Command::Check => "check",
            Command::Conformal => "conformal",
            Command::LocalTime => "local-time",
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let path = cli.config.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let (mut cfg, _) = ExperimentConfig::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(f) = cli.format {
        cfg.output.formats = vec![match f {
            FormatArg::Json => Format::Json,
            FormatArg::Csv => Format::Csv,
        }];
    }
    let dir = cli.out.unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let workers = cfg.workers(cli.workers);
    // worker count never changes results, so it stays out of the hash
    let mut manifest = RunManifest::new(cli.command.name(), &cfg.canonical_without_workers(), cfg.master_seed);
    let ctx = Context { cfg: &cfg, dir: &dir, workers, formats: &cfg.output.formats };
    let code = match cli.command {
        Command::Simulate => commands::simulate(&ctx, &mut manifest),
        Command::Curvature => commands::curvature(&ctx, &mut manifest, false),
        Command::SecondForm => commands::curvature(&ctx, &mut manifest, true),
        Command::Check => commands::check(&ctx, &mut manifest),
        Command::Conformal => commands::conformal(&ctx, &mut manifest),
        Command::LocalTime => commands::local_time(&ctx, &mut manifest),
    }?;
    manifest.finish(&dir, code)?;
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
