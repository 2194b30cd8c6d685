mod ci;
mod ingest;
mod opts;
mod simulate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use medci::{Budget, BudgetKind, ContinuityConfig, ErrorClass, Hyperparams, Mechanism, MechanismKind, RangeSpec};

use crate::opts::{CiOpts, Common, SimOpts};

#[derive(Parser)]
#[command(name = "medci", version, about = "Differentially private confidence intervals for the median")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Confidence intervals for a column of a CSV file, optionally per group.
    Ci(CiOpts),
    /// Monte-Carlo widths, coverage and bias over a mechanism × budget grid.
    Simulate(SimOpts),
    /// Like simulate, with coverage-sized defaults and a coverage table.
    Coverage(SimOpts),
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Mechanism(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Mechanism(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Mechanism(m) => write!(f, "mechanism error: {m}"),
        }
    }
}

impl From<medci::Error> for CliError {
    fn from(e: medci::Error) -> Self {
        match e.class() {
            ErrorClass::Config => CliError::Config(e.to_string()),
            ErrorClass::Data => CliError::Data(e.to_string()),
            ErrorClass::Mechanism => CliError::Mechanism(e.to_string()),
        }
    }
}

pub fn require<T>(v: Option<T>, name: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Config(format!("--{name} is required")))
}

pub fn range_spec(c: &Common, theta: Option<f64>) -> Result<RangeSpec, CliError> {
    let theta = require(theta.or(c.theta), "theta")?;
    match c.range.as_slice() {
        [lo, hi] => Ok(RangeSpec::new(*lo, *hi, theta)?),
        [] => Err(CliError::Config("--range is required".into())),
        _ => Err(CliError::Config("--range takes LOWER,UPPER".into())),
    }
}

pub fn budget(kind: BudgetKind, value: f64) -> Result<Budget, CliError> {
    Ok(Budget::new(kind, value)?)
}

/// Mechanism from its name plus the shared options; `--union` maps the
/// tight variants to their union-bound versions.
pub fn build_mechanism(name: &str, c: &Common, theta: Option<f64>) -> Result<Mechanism, CliError> {
    let mut kind: MechanismKind = name.parse()?;
    if c.union.unwrap_or(false) {
        kind = match kind {
            MechanismKind::ExpMech => MechanismKind::ExpMechUnion,
            MechanismKind::Cdf => MechanismKind::CdfUnion,
            MechanismKind::ExpMechUnion | MechanismKind::CdfUnion => kind,
            other => return Err(CliError::Config(format!("--union does not apply to {other}"))),
        };
    }
    let mut params = Hyperparams::new(require(c.alpha, "alpha")?, range_spec(c, theta)?);
    params.gamma = c.gamma;
    params.r1 = c.r1;
    params.beta2 = c.beta2;
    let mut m = Mechanism::new(kind, params);
    match c.continuity_sigma {
        Some(s) if s > 0.0 => {
            let beta = require(c.continuity_beta, "continuity-beta")?;
            m = medci::composite::wrap_continuity(m, ContinuityConfig::new(s, beta)?);
        }
        Some(s) if s < 0.0 => return Err(CliError::Config("--continuity-sigma must be >= 0".into())),
        _ => {}
    }
    Ok(m)
}

pub fn output_dir(dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir.to_path_buf())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Ci(o) => o.resolve().and_then(ci::run),
        Command::Simulate(o) => o.resolve().and_then(|o| simulate::run(o, false)),
        Command::Coverage(o) => o.resolve().and_then(|o| simulate::run(o, true)),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
