//! Report files and the run manifest. Every file is written to a temporary
//! sibling and renamed into place.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| io(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(io)?;
    write_atomic(path, &bytes)
}

pub fn config_hash(canonical: &str) -> String {
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Reproducibility record of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub code_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub reports: Vec<String>,
    pub discarded_paths: usize,
    pub total_paths: usize,
    /// `𝔼 exp((2+ε)A_T)` per check, the integrability diagnostic.
    pub exponential_moments: BTreeMap<String, serde_json::Value>,
    pub exit_code: i32,
}

impl RunManifest {
    pub fn new(command: &str, canonical: &str, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config_hash: config_hash(canonical),
            master_seed: seed,
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: unix_now(),
            finished_unix: 0.0,
            reports: Vec::new(),
            discarded_paths: 0,
            total_paths: 0,
            exponential_moments: BTreeMap::new(),
            exit_code: 0,
        }
    }

    pub fn record(&mut self, dir: &Path, file: &Path) {
        let rel = file.strip_prefix(dir).unwrap_or(file);
        self.reports.push(rel.display().to_string());
    }

    pub fn count(&mut self, n_paths: usize, discarded: usize) {
        self.total_paths += n_paths;
        self.discarded_paths += discarded;
    }

    pub fn finish(mut self, dir: &Path, exit_code: i32) -> Result<PathBuf, CliError> {
        self.finished_unix = unix_now();
        self.exit_code = exit_code;
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}
