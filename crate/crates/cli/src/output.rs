//! Run directories: manifest, JSON reports and CSV tables.

use crate::config::RunConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

/// Provenance of one run. Everything except `wall_time_seconds` is
/// reproducible from the config and seed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub passed: bool,
    pub outputs: Vec<String>,
    pub wall_time_seconds: f64,
    pub config: RunConfig,
}

/// Collects the files written into one output directory.
pub struct RunDir {
    root: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, OutputError> {
        std::fs::create_dir_all(root).map_err(|source| OutputError::Io { path: root.into(), source })?;
        Ok(RunDir { root: root.into(), written: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), OutputError> {
        let path = self.root.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json { path: path.clone(), source })?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| OutputError::Io { path, source })?;
        self.written.push(name.into());
        Ok(())
    }

    /// Writes a numeric table; floats use the shortest round-trip form.
    pub fn csv(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<(), OutputError> {
        let path = self.root.join(name);
        let err = |source| OutputError::Csv { path: path.clone(), source };
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        w.write_record(header).map_err(err)?;
        for row in rows {
            w.write_record(row.iter().map(|v| number(*v))).map_err(err)?;
        }
        w.flush().map_err(|source| OutputError::Io { path: path.clone(), source })?;
        self.written.push(name.into());
        Ok(())
    }

    pub fn manifest(mut self, command: &str, config: &RunConfig, passed: bool, wall_time_seconds: f64) -> Result<(), OutputError> {
        let mut outputs = self.written.clone();
        outputs.push("manifest.json".into());
        let m = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: config.seed,
            passed,
            outputs,
            wall_time_seconds,
            config: config.clone(),
        };
        self.json("manifest.json", &m)
    }
}

/// Shortest round-trip form, in scientific notation outside [1e-4, 1e15).
pub fn number(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, OutputError> {
    let text = std::fs::read_to_string(path).map_err(|source| OutputError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| OutputError::Json { path: path.into(), source })
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
