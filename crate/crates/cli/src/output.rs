//! Data files and the manifest written beside them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{ExperimentConfig, Format};
use crate::error::CliError;
use crate::experiments::{ExperimentOutput, Gate, LambdaRecord};

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    seed: u64,
    format: Format,
    config: String,
    lambda: Option<LambdaRecord>,
    wall_time_seconds: f64,
    workers: usize,
    files: Vec<String>,
    gates: &'a [Gate],
    summary: &'a serde_json::Value,
}

pub fn manifest_name(cfg: &ExperimentConfig) -> String {
    format!("{}-manifest.json", cfg.kind())
}

/// Writes every table in the configured format plus the manifest and
/// returns the paths written, data files first.
pub fn write_all(dir: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput, wall: f64, workers: usize) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir)?;
    let format = cfg.format.expect("normalized");
    let mut files = Vec::new();
    for t in &out.tables {
        let (ext, bytes) = match format {
            Format::Csv => ("csv", &t.csv),
            Format::Json => ("json", &t.json),
        };
        let path = dir.join(format!("{}.{ext}", t.name));
        fs::write(&path, bytes)?;
        files.push(path);
    }
    let manifest = Manifest {
        experiment: cfg.kind().name(),
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed.expect("normalized"),
        format,
        config: cfg.echo(),
        lambda: out.lambda,
        wall_time_seconds: wall,
        workers,
        files: files
            .iter()
            .filter_map(|p| p.file_name())
            .map(|n| n.to_string_lossy().into_owned())
            .collect(),
        gates: &out.gates,
        summary: &out.summary,
    };
    let path = dir.join(manifest_name(cfg));
    let mut text = serde_json::to_vec_pretty(&manifest)?;
    text.push(b'\n');
    fs::write(&path, text)?;
    files.push(path);
    Ok(files)
}
