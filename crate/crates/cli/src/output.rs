//! Output directory handling, run manifests and file writers.

use std::fs;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliResult;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "GENFRAC_OUT";

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub phi_spec: String,
    pub grid: Option<(f64, usize)>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub timestamp: String,
}

impl RunManifest {
    /// Manifest for a run whose complete configuration is `config`.
    pub fn new<C: Serialize>(command: &str, config: &C, phi_spec: &str, grid: Option<(f64, usize)>, seed: Option<u64>) -> CliResult<Self> {
        let canonical = serde_json::to_vec(config)?;
        let digest = Sha256::digest(&canonical);
        Ok(Self {
            command: command.to_string(),
            config_hash: format!("{digest:x}"),
            phi_spec: phi_spec.to_string(),
            grid,
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }
}

/// Where a run writes its files.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn resolve(explicit: Option<PathBuf>) -> CliResult<Self> {
        let root = explicit
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("genfrac-out"));
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Write a CSV file from a header and numeric rows.
    pub fn write_csv(&self, name: &str, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(path)
    }

    /// Write the manifest next to the data files of the run.
    pub fn write_manifest(&self, manifest: &RunManifest) -> CliResult<PathBuf> {
        self.write_json(&format!("{}_manifest.json", manifest.command), manifest)
    }
}

/// Format a float so that it parses back to the same value.
pub fn num(x: f64) -> String {
    x.to_string()
}
