//! Experiment harness: configuration, orchestration and artifact output.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;
use std::time::Instant;

pub use config::{validate_config, ExperimentConfig, ExperimentKind, Format};
pub use error::{exit, CliError};
pub use experiments::{run_experiment, ExperimentOutput, Gate};

/// Environment variable that overrides the worker count.
pub const WORKERS_ENV: &str = "TWOSTAGE_WORKERS";

pub const DEFAULT_OUT: &str = "results";

#[derive(Clone, Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub gates: Vec<Gate>,
}

impl RunReport {
    pub fn failed_gates(&self) -> Vec<&Gate> {
        self.gates.iter().filter(|g| !g.passed).collect()
    }
}

/// Normalizes `cfg`, runs it on a dedicated worker pool and writes the data
/// files and the manifest. Gate failures are reported, not raised.
pub fn run(cfg: ExperimentConfig) -> Result<RunReport, CliError> {
    let cfg = cfg.normalize()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| CliError::Output(e.to_string()))?;
    let start = Instant::now();
    let result = pool.install(|| run_experiment(&cfg))?;
    let wall = start.elapsed().as_secs_f64();
    let out_dir = PathBuf::from(cfg.out.clone().unwrap_or_else(|| DEFAULT_OUT.to_string()));
    let files = output::write_all(&out_dir, &cfg, &result, wall, pool.current_num_threads())?;
    Ok(RunReport {
        out_dir,
        files,
        gates: result.gates,
    })
}
