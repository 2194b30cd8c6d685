//! Command-line options. Every option can also come from a TOML file passed
//! with `--config`; flags given on the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Records,
    Summary,
    #[default]
    Both,
}

impl Format {
    pub fn records(self) -> bool {
        self != Format::Summary
    }

    pub fn summary(self) -> bool {
        self != Format::Records
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Common {
    /// Miscoverage level α of the 1 − α interval.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Range R as LOWER,UPPER.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1)]
    pub range: Vec<f64>,
    /// Granularity θ.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Budget fraction (NoisyBinSearch phase of the hybrid, sampling share elsewhere).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Coverage fraction of the hybrid's search phase.
    #[arg(long)]
    pub r1: Option<f64>,
    /// Privacy-error share of α on the union ExpMech path.
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Use the union-bound analysis (exp_mech and cdf only).
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub union: Option<bool>,
    /// Gaussian smoothing scale for discrete data; 0 turns it off.
    #[arg(long)]
    pub continuity_sigma: Option<f64>,
    /// β of the β-good guarantee when smoothing is on.
    #[arg(long)]
    pub continuity_beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; without it results go to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CiOpts {
    /// TOML file with any of these options.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Numeric column to analyse.
    #[arg(long)]
    pub column: Option<String>,
    /// Grouping characteristic: a column name or a predicate like `age>=65`. Repeatable.
    #[arg(long = "group-by")]
    pub group_by: Vec<String>,
    /// Budget fractions per characteristic, summing to 1. Equal by default.
    #[arg(long, value_delimiter = ',')]
    pub split: Vec<f64>,
    #[arg(long)]
    pub mechanism: Option<String>,
    /// Total zCDP budget ρ.
    #[arg(long, conflicts_with = "epsilon")]
    pub rho: Option<f64>,
    /// Total pure-DP budget ε (exp_mech only).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Show negative lower endpoints as 0 (point estimates are unaffected).
    #[arg(long, num_args = 0, default_missing_value = "true")]
    pub truncate_nonneg: Option<bool>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOpts {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// lognormal:MU,SIGMA | normal:MU,SIGMA | uniform:A,B | empirical:PATH
    #[arg(long, allow_hyphen_values = true)]
    pub distribution: Option<String>,
    /// Column of the population file in empirical mode.
    #[arg(long)]
    pub population_column: Option<String>,
    /// Sampling rate in empirical mode.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub datasets: Option<usize>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Mechanisms to run; comma separated or repeated.
    #[arg(long = "mechanism", value_delimiter = ',')]
    pub mechanisms: Vec<String>,
    /// zCDP budgets to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "epsilon")]
    pub rho: Vec<f64>,
    /// Pure-DP budgets to sweep.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Vec<f64>,
    /// Per-mechanism θ override as NAME=THETA. Repeatable.
    #[arg(long = "theta-for")]
    pub theta_for: Vec<String>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn or_vec<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
    if a.is_empty() {
        b
    } else {
        a
    }
}

impl Common {
    fn merge(self, f: Common) -> Common {
        Common {
            alpha: self.alpha.or(f.alpha),
            range: or_vec(self.range, f.range),
            theta: self.theta.or(f.theta),
            gamma: self.gamma.or(f.gamma),
            r1: self.r1.or(f.r1),
            beta2: self.beta2.or(f.beta2),
            union: self.union.or(f.union),
            continuity_sigma: self.continuity_sigma.or(f.continuity_sigma),
            continuity_beta: self.continuity_beta.or(f.continuity_beta),
            seed: self.seed.or(f.seed),
            output: self.output.or(f.output),
            format: self.format.or(f.format),
        }
    }
}

impl CiOpts {
    pub fn resolve(self) -> Result<CiOpts, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let f: CiOpts = read_toml(&path)?;
        // a budget on the command line replaces the file's, whichever kind it is
        let cli_budget = (self.rho.is_some() || self.epsilon.is_some()).then_some((self.rho, self.epsilon));
        let mut merged = self.merge(f);
        if let Some((rho, epsilon)) = cli_budget {
            merged.rho = rho;
            merged.epsilon = epsilon;
        }
        Ok(merged)
    }

    fn merge(self, f: CiOpts) -> CiOpts {
        CiOpts {
            config: self.config,
            input: self.input.or(f.input),
            column: self.column.or(f.column),
            group_by: or_vec(self.group_by, f.group_by),
            split: or_vec(self.split, f.split),
            mechanism: self.mechanism.or(f.mechanism),
            rho: self.rho.or(f.rho),
            epsilon: self.epsilon.or(f.epsilon),
            truncate_nonneg: self.truncate_nonneg.or(f.truncate_nonneg),
            common: self.common.merge(f.common),
        }
    }
}

impl SimOpts {
    pub fn resolve(self) -> Result<SimOpts, CliError> {
        let Some(path) = self.config.clone() else { return Ok(self) };
        let f: SimOpts = read_toml(&path)?;
        let cli_budget = !self.rho.is_empty() || !self.epsilon.is_empty();
        let (rho, epsilon) = if cli_budget { (self.rho, self.epsilon) } else { (f.rho, f.epsilon) };
        Ok(SimOpts {
            config: self.config,
            distribution: self.distribution.or(f.distribution),
            population_column: self.population_column.or(f.population_column),
            rate: self.rate.or(f.rate),
            n: self.n.or(f.n),
            datasets: self.datasets.or(f.datasets),
            trials: self.trials.or(f.trials),
            mechanisms: or_vec(self.mechanisms, f.mechanisms),
            rho,
            epsilon,
            theta_for: or_vec(self.theta_for, f.theta_for),
            common: self.common.merge(f.common),
        })
    }
}
