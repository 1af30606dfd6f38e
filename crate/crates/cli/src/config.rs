//! Flat TOML experiment configuration.
//!
//! Every key sits at the top level. Keys that an experiment does not use are
//! rejected, and missing keys take per-experiment defaults, so the
//! normalized echo of a config lists exactly the values that were used.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    SurvivalSweep,
    DualityCheck,
    BranchingVerify,
    Moments,
    HittingTables,
    BoundsReport,
    InvariantGap,
    SixBounds,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::SurvivalSweep,
        ExperimentKind::DualityCheck,
        ExperimentKind::BranchingVerify,
        ExperimentKind::Moments,
        ExperimentKind::HittingTables,
        ExperimentKind::BoundsReport,
        ExperimentKind::InvariantGap,
        ExperimentKind::SixBounds,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SurvivalSweep => "survival-sweep",
            ExperimentKind::DualityCheck => "duality-check",
            ExperimentKind::BranchingVerify => "branching-verify",
            ExperimentKind::Moments => "moments",
            ExperimentKind::HittingTables => "hitting-tables",
            ExperimentKind::BoundsReport => "bounds-report",
            ExperimentKind::InvariantGap => "invariant-gap",
            ExperimentKind::SixBounds => "six-bounds",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::SurvivalSweep => "survival fraction from one fully infected site over a grid of infection rates",
            ExperimentKind::DualityCheck => "two-stage / on-off duality on random instances, exact on tiny tori and Monte Carlo otherwise",
            ExperimentKind::BranchingVerify => "branching survival: closed form, Monte Carlo and the truncated-chain bracket",
            ExperimentKind::Moments => "second-moment equations of the linear system, optionally against simulation",
            ExperimentKind::HittingTables => "hitting probabilities of the simple random walk and the auxiliary walk per offset orbit",
            ExperimentKind::BoundsReport => "closed-form bounds on the critical rate, optionally with a Monte Carlo bracket",
            ExperimentKind::InvariantGap => "quasi-stationary samples against the product measure over declared set families",
            ExperimentKind::SixBounds => "binomial tail, ceiling and composite lower bound on one minus pi",
        }
    }

    /// Keys this experiment reads besides the common ones.
    fn keys(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::SurvivalSweep => &[
                "lambda_grid",
                "delta",
                "gamma",
                "d",
                "side",
                "horizon",
                "replicas",
                "cap",
                "process",
            ],
            ExperimentKind::DualityCheck => &["lambda", "delta", "gamma", "d", "side", "horizon", "instances", "replicas"],
            ExperimentKind::BranchingVerify => &["lambda", "delta", "gamma", "replicas", "cap", "truncation_tol"],
            ExperimentKind::Moments => &["lambda", "delta", "gamma", "d", "radius", "times", "replicas", "check_doubling"],
            ExperimentKind::HittingTables => &["lambda", "delta", "gamma", "d", "radius"],
            ExperimentKind::BoundsReport => &[
                "delta",
                "gamma",
                "dims",
                "solve_radius",
                "lambda_grid",
                "bracket_d",
                "side",
                "horizon",
                "replicas",
                "cap",
                "threshold",
                "max_runs",
            ],
            ExperimentKind::InvariantGap => &[
                "lambda", "delta", "gamma", "d", "side", "burn_in", "samples", "thinning", "chains", "sizes", "replicas", "horizon", "cap",
            ],
            ExperimentKind::SixBounds => &[
                "lambda", "delta", "gamma", "d", "n", "m", "big_m", "side", "burn_in", "samples", "thinning", "chains",
            ],
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::config("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::config("format", format!("expected csv or json, got `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Process {
    TwoStage,
    OnOff,
}

/// A validated, fully defaulted experiment configuration. Keys an
/// experiment does not read are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<Process>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instances: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truncation_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check_doubling: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solve_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bracket_d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thinning: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<[usize; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub big_m: Option<Vec<usize>>,
}

macro_rules! default_keys {
    ($cfg:ident, $($key:ident = $val:expr),* $(,)?) => {
        $( if $cfg.$key.is_none() { $cfg.$key = Some($val); } )*
    };
}

impl ExperimentConfig {
    /// Parses TOML text without normalizing it.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::config("config", e.message()))?;
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let mut field = e.path().to_string();
            let reason = e.inner().message().to_string();
            if field == "." {
                // unknown keys surface at the root; the message names them
                field = reason.split('`').nth(1).unwrap_or("config").to_string();
            }
            CliError::Config { field, reason }
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults for `kind` with nothing else set.
    pub fn for_kind(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment: Some(kind),
            ..Default::default()
        }
    }

    pub fn kind(&self) -> ExperimentKind {
        self.experiment.expect("normalized config has an experiment")
    }

    /// Fills defaults, rejects unused keys and validates values.
    pub fn normalize(mut self) -> Result<Self, CliError> {
        let kind = self.experiment.ok_or_else(|| CliError::config("experiment", "missing"))?;
        self.reject_unused(kind)?;
        default_keys!(self, seed = 1, format = Format::Csv);
        match kind {
            ExperimentKind::SurvivalSweep => {
                default_keys!(
                    self,
                    lambda_grid = vec![1.0, 2.0, 3.0, 4.0, 5.0],
                    delta = 1.0,
                    gamma = 2.0,
                    d = 2,
                    side = 7,
                    horizon = 20.0,
                    replicas = 1000,
                    process = Process::TwoStage,
                );
                if self.lambda_grid.as_ref().is_some_and(Vec::is_empty) {
                    return Err(CliError::config("lambda_grid", "empty grid"));
                }
            }
            ExperimentKind::DualityCheck => {
                default_keys!(
                    self,
                    lambda = 2.0,
                    delta = 1.0,
                    gamma = 2.0,
                    d = 1,
                    side = 3,
                    horizon = 2.0,
                    instances = 20,
                    replicas = 20_000
                );
            }
            ExperimentKind::BranchingVerify => {
                default_keys!(
                    self,
                    lambda = 3.0,
                    delta = 1.0,
                    gamma = 2.0,
                    replicas = 100_000,
                    cap = 10_000,
                    truncation_tol = 1e-9
                );
            }
            ExperimentKind::Moments => {
                default_keys!(
                    self,
                    lambda = 2.0,
                    delta = 1.0,
                    gamma = 2.0,
                    d = 2,
                    radius = 5,
                    times = vec![0.5, 1.0, 2.0],
                    replicas = 0,
                    check_doubling = false
                );
            }
            ExperimentKind::HittingTables => {
                default_keys!(self, lambda = 3.0, delta = 1.0, gamma = 2.0, d = 3, radius = 20);
            }
            ExperimentKind::BoundsReport => {
                default_keys!(self, delta = 1.0, gamma = 2.0, dims = vec![10, 100, 1000, 10_000]);
                if self.lambda_grid.is_some() {
                    default_keys!(
                        self,
                        bracket_d = 10,
                        side = 3,
                        horizon = 20.0,
                        replicas = 400,
                        cap = 1000,
                        threshold = 0.02,
                        max_runs = 10_000_000
                    );
                } else if [
                    self.side.is_some(),
                    self.horizon.is_some(),
                    self.replicas.is_some(),
                    self.cap.is_some(),
                ]
                .into_iter()
                .chain([self.bracket_d.is_some(), self.threshold.is_some(), self.max_runs.is_some()])
                .any(|set| set)
                {
                    return Err(CliError::config("lambda_grid", "bracket settings given without a grid"));
                }
                if self.dims.as_ref().is_some_and(Vec::is_empty) {
                    return Err(CliError::config("dims", "empty list"));
                }
            }
            ExperimentKind::InvariantGap => {
                default_keys!(
                    self,
                    lambda = 8.0,
                    delta = 1.0,
                    gamma = 2.0,
                    d = 4,
                    side = 3,
                    burn_in = 20.0,
                    samples = 20,
                    thinning = 0.5,
                    chains = 32,
                    sizes = vec![[1, 0], [0, 1], [1, 1]],
                    replicas = 20_000,
                    horizon = 10.0,
                    cap = 40,
                );
            }
            ExperimentKind::SixBounds => {
                default_keys!(
                    self,
                    lambda = 8.0,
                    delta = 1.0,
                    gamma = 2.0,
                    d = 4,
                    n = 1,
                    m = 1,
                    big_m = vec![3, 5, 7]
                );
                if self.side.is_some() {
                    default_keys!(self, burn_in = 20.0, samples = 20, thinning = 0.5, chains = 32);
                }
                if self.big_m.as_ref().is_some_and(Vec::is_empty) {
                    return Err(CliError::config("big_m", "empty list"));
                }
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn reject_unused(&self, kind: ExperimentKind) -> Result<(), CliError> {
        let value = toml::Value::try_from(self).map_err(|e| CliError::config("config", e.to_string()))?;
        let table = value.as_table().expect("config serializes to a table");
        let common = ["experiment", "seed", "format", "out", "workers"];
        for key in table.keys() {
            if !common.contains(&key.as_str()) && !kind.keys().contains(&key.as_str()) {
                return Err(CliError::config_owned(key.clone(), format!("not used by {kind}")));
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |field: &'static str, v: Option<f64>| match v {
            Some(x) if !(x.is_finite() && x > 0.0) => Err(CliError::config(field, format!("must be positive and finite, got {x}"))),
            _ => Ok(()),
        };
        positive("lambda", self.lambda)?;
        positive("gamma", self.gamma)?;
        positive("horizon", self.horizon)?;
        positive("thinning", self.thinning)?;
        positive("truncation_tol", self.truncation_tol)?;
        if let Some(delta) = self.delta {
            if !(delta.is_finite() && delta >= 0.0) {
                return Err(CliError::config("delta", format!("must be finite and nonnegative, got {delta}")));
            }
        }
        if let Some(b) = self.burn_in {
            if !(b.is_finite() && b >= 0.0) {
                return Err(CliError::config("burn_in", "must be finite and nonnegative"));
            }
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::config(
                    "lambda_grid",
                    "must be finite, nonnegative and strictly increasing",
                ));
            }
        }
        if let Some(times) = &self.times {
            if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t > 0.0)) || times.windows(2).any(|w| w[0] >= w[1]) {
                return Err(CliError::config("times", "need increasing positive times"));
            }
        }
        for (field, v) in [
            ("d", self.d),
            ("side", self.side),
            ("radius", self.radius),
            ("bracket_d", self.bracket_d),
        ] {
            if v == Some(0) {
                return Err(CliError::config(field, "must be at least 1"));
            }
        }
        if self.workers == Some(0) {
            return Err(CliError::config("workers", "must be at least 1"));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(CliError::config("threshold", "must lie in (0, 1)"));
            }
        }
        Ok(())
    }

    /// Normalized TOML text.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parses, normalizes and echoes a config file.
pub fn validate_config(path: &Path) -> Result<String, CliError> {
    Ok(ExperimentConfig::load(path)?.normalize()?.echo())
}
