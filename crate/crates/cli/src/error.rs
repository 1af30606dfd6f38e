use thiserror::Error;

/// Exit codes of the `twostage` binary.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INTERNAL: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const GATE: i32 = 3;
    pub const BUDGET: i32 = 4;
    pub const MODEL: i32 = 5;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("gate `{name}` failed: {detail}")]
    Gate { name: String, detail: String },

    #[error(transparent)]
    Model(twostage::Error),

    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("output: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(field: &str, reason: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    pub fn config_owned(field: String, reason: impl Into<String>) -> Self {
        CliError::Config {
            field,
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Budget(_) => exit::BUDGET,
            CliError::Gate { .. } => exit::GATE,
            CliError::Model(_) => exit::MODEL,
            CliError::Io(_) | CliError::Output(_) => exit::INTERNAL,
        }
    }
}

impl From<twostage::Error> for CliError {
    fn from(e: twostage::Error) -> Self {
        use twostage::Error as E;
        match e {
            E::Parameter { field, reason } => CliError::config(field, reason),
            E::Size { .. } | E::BudgetExceeded(_) => CliError::Budget(e.to_string()),
            E::ExtinctionDuringSampling { .. } => CliError::Gate {
                name: "stationarity".into(),
                detail: e.to_string(),
            },
            other => CliError::Model(other),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Output(e.to_string())
    }
}
