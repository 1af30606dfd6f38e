use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use twostage_cli::{exit, run, validate_config, CliError, ExperimentConfig, ExperimentKind, Format, WORKERS_ENV};

#[derive(Parser)]
#[command(name = "twostage", version, about = "Experiments on the two-stage contact process")]
struct Cli {
    /// Flat TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<String>,
    /// csv or json
    #[arg(long, global = true)]
    format: Option<String>,
    /// Worker threads
    #[arg(long, global = true, env = WORKERS_ENV)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Survival fraction over a grid of infection rates
    SurvivalSweep,
    /// Two-stage / on-off duality on random instances
    DualityCheck,
    /// Branching survival against its closed form
    BranchingVerify,
    /// Second-moment equations of the linear system
    Moments,
    /// Random walk hitting probabilities per offset orbit
    HittingTables,
    /// Closed-form bounds on the critical rate
    BoundsReport,
    /// Quasi-stationary measure against the product law
    InvariantGap,
    /// Pieces of the lower bound on one minus pi
    SixBounds,
    /// List experiment kinds
    List,
    /// Print the normalized form of a config file
    Validate { path: PathBuf },
}

fn kind(c: &Command) -> Option<ExperimentKind> {
    Some(match c {
        Command::SurvivalSweep => ExperimentKind::SurvivalSweep,
        Command::DualityCheck => ExperimentKind::DualityCheck,
        Command::BranchingVerify => ExperimentKind::BranchingVerify,
        Command::Moments => ExperimentKind::Moments,
        Command::HittingTables => ExperimentKind::HittingTables,
        Command::BoundsReport => ExperimentKind::BoundsReport,
        Command::InvariantGap => ExperimentKind::InvariantGap,
        Command::SixBounds => ExperimentKind::SixBounds,
        Command::List | Command::Validate { .. } => return None,
    })
}

fn execute(cli: Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::List => {
            for k in ExperimentKind::ALL {
                println!("{:<18} {}", k.name(), k.description());
            }
            return Ok(exit::OK);
        }
        Command::Validate { path } => {
            print!("{}", validate_config(path)?);
            return Ok(exit::OK);
        }
        _ => {}
    }
    let kind = kind(&cli.command).expect("experiment subcommand");
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::for_kind(kind),
    };
    match cfg.experiment {
        Some(k) if k != kind => {
            return Err(CliError::config("experiment", format!("config is for {k}, subcommand is {kind}")));
        }
        _ => cfg.experiment = Some(kind),
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if let Some(f) = &cli.format {
        cfg.format = Some(f.parse::<Format>()?);
    }
    if cli.workers.is_some() {
        cfg.workers = cli.workers;
    }
    let report = run(cfg)?;
    for f in &report.files {
        println!("{}", f.display());
    }
    let failed = report.failed_gates();
    for g in &failed {
        eprintln!("gate `{}` failed: {}", g.name, g.detail);
    }
    Ok(if failed.is_empty() { exit::OK } else { exit::GATE })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
