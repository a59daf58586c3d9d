//! CSV and JSON artifacts plus the run manifest.
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ficon_core::hum::SweepRow;
use ficon_core::observability::{EnsembleReport, LHS_NAMES, RHS_NAMES};
use ficon_core::trajectory::PicardRecord;
use ficon_core::{Grid, SpaceTimeField, WeightSystem};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::run::RunError;

pub const FIELD_HEADER: &str = "x0,x1,value";
pub const SWEEP_HEADER: &str = "epsilon,terminal_norm,J1,J2,J3,J4,pde_residual,cg_iters";
pub const HISTORY_HEADER: &str = "iterate,terminal_error,remainder_norm,inner_cg_iters";
pub const WEIGHTS_HEADER: &str = "x0,x1,phi1,phi2,psi_star";

/// Collects output files in memory, then writes them with their hashes.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
    /// Hash over the config hash and every file entry; stable across reruns.
    pub content_hash: String,
    pub wall_time_seconds: f64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Artifacts {
    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Property(format!("{name}: {e}")))?;
        text.push('\n');
        self.add(name, text.into_bytes());
        Ok(())
    }

    pub fn entries(&self) -> Vec<FileEntry> {
        self.files
            .iter()
            .map(|(name, bytes)| FileEntry { name: name.clone(), bytes: bytes.len(), sha256: sha256_hex(bytes) })
            .collect()
    }

    /// Writes every file and `manifest.json` into `dir`.
    pub fn write(
        &self,
        dir: &Path,
        command: &str,
        seed: Option<u64>,
        config: &serde_json::Value,
        wall_time_seconds: f64,
    ) -> Result<Manifest, RunError> {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        }
        let config_text = serde_json::to_string(config).expect("config values serialize");
        let config_sha256 = sha256_hex(config_text.as_bytes());
        let files = self.entries();
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update(config_sha256.as_bytes());
        for f in &files {
            h.update(f.name.as_bytes());
            h.update(f.sha256.as_bytes());
        }
        let manifest = Manifest {
            tool: "ficon",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config: config.clone(),
            config_sha256,
            files,
            content_hash: hex::encode(h.finalize()),
            wall_time_seconds,
        };
        let path = dir.join("manifest.json");
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_error(&path, e))?;
        Ok(manifest)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> RunError {
    RunError::Io { path: PathBuf::from(path), source }
}

/// Long format, one row per node and level.
pub fn field_csv(grid: &Grid, field: &SpaceTimeField) -> Vec<u8> {
    let mut out = String::from(FIELD_HEADER);
    out.push('\n');
    for k in 0..field.n_levels {
        let t = grid.time(k);
        for (i, x) in grid.x_nodes.iter().enumerate() {
            // `+ 0.0` prints negative zero as `0`.
            let _ = writeln!(out, "{t},{x},{}", field.get(k, i) + 0.0);
        }
    }
    out.into_bytes()
}

pub fn sweep_csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok(v) => {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    row.epsilon,
                    v.terminal_norm,
                    v.j_terms[0],
                    v.j_terms[1],
                    v.j_terms[2],
                    v.j_terms[3],
                    v.pde_residual,
                    v.cg_iterations
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{},NaN,NaN,NaN,NaN,NaN,NaN,", row.epsilon);
            }
        }
    }
    out.into_bytes()
}

pub fn history_csv(history: &[PicardRecord]) -> Vec<u8> {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.iterate, r.terminal_error, r.remainder_norm, r.inner_cg_iters);
    }
    out.into_bytes()
}

pub fn weights_csv(grid: &Grid, ws: &WeightSystem) -> Vec<u8> {
    let mut out = String::from(WEIGHTS_HEADER);
    out.push('\n');
    for t in grid.times() {
        for &x in &grid.x_nodes {
            let _ = writeln!(out, "{t},{x},{},{},{}", ws.phi1(t, x), ws.phi2(t, x), ws.psi_star(t, x));
        }
    }
    out.into_bytes()
}

/// Per-sample itemized terms of the observability ensemble.
pub fn terms_csv(report: &EnsembleReport) -> Vec<u8> {
    let mut out = String::from("sample,ratio");
    for n in LHS_NAMES.iter().chain(RHS_NAMES.iter()) {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, (lhs, rhs)) in report.cases.iter().enumerate() {
        let _ = write!(out, "{i},{}", report.ratios[i]);
        for v in lhs.iter().chain(rhs.iter()) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservabilityJson {
    pub samples: usize,
    pub seed: u64,
    pub s_hat: f64,
    pub ratios: Vec<f64>,
    pub max: f64,
    pub median: f64,
    pub min: f64,
    /// `ŝ` (as written by `{}`) → max ratio.
    pub s_hat_sweep: serde_json::Map<String, serde_json::Value>,
}

impl From<&EnsembleReport> for ObservabilityJson {
    fn from(r: &EnsembleReport) -> Self {
        let s_hat_sweep = r.s_hat_sweep.iter().map(|e| (format!("{}", e.s_hat), serde_json::json!(e.max))).collect();
        ObservabilityJson {
            samples: r.samples,
            seed: r.seed,
            s_hat: r.s_hat,
            ratios: r.ratios.clone(),
            max: r.max,
            median: r.median,
            min: r.min,
            s_hat_sweep,
        }
    }
}
