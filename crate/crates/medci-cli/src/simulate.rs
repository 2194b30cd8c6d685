//! `medci simulate` and `medci coverage`: run_experiment over the product of
//! mechanisms and budgets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use medci::eval::{run_experiment, Distribution, ExperimentConfig, Report, Summary};
use medci::{Budget, BudgetKind, MechanismKind};
use serde::Serialize;

use crate::ingest::ingest;
use crate::opts::{Format, SimOpts};
use crate::{budget, build_mechanism, output_dir, require, write_file, CliError};

#[derive(Debug, Serialize)]
struct SimRow<'a> {
    mechanism: &'a str,
    budget_kind: BudgetKind,
    budget: f64,
    dataset: usize,
    trial: usize,
    n: usize,
    lower: Option<f64>,
    upper: Option<f64>,
    point: Option<f64>,
    np_lower: Option<f64>,
    np_upper: Option<f64>,
    rel_width: Option<f64>,
    covered: bool,
    spent: f64,
    error: Option<&'a str>,
}

#[derive(Debug, Serialize)]
struct CellRow<'a> {
    mechanism: &'a str,
    budget_kind: BudgetKind,
    budget: f64,
    n: usize,
    alpha: f64,
    theta: f64,
    runs: usize,
    failures: usize,
    coverage: f64,
    coverage_floor: f64,
    meets_floor: bool,
    nonprivate_coverage: f64,
    rel_width_q05: f64,
    rel_width_q25: f64,
    rel_width_q50: f64,
    rel_width_q75: f64,
    rel_width_q95: f64,
    bias: f64,
    nonprivate_bias: f64,
    mean_spend: f64,
}

fn pair(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("expected two numbers A,B in '{s}'"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn parse_distribution(spec: &str, o: &SimOpts) -> Result<Distribution, CliError> {
    let (family, args) = spec.split_once(':').ok_or_else(|| CliError::Config(format!("distribution '{spec}' has no ':'")))?;
    let d = match family {
        "lognormal" => pair(args).map(|(mu, sigma)| Distribution::Lognormal { mu, sigma })?,
        "normal" => pair(args).map(|(mu, sigma)| Distribution::Normal { mu, sigma })?,
        "uniform" => pair(args).map(|(a, b)| Distribution::Uniform { a, b })?,
        "empirical" => {
            let column = require(o.population_column.clone(), "population-column")?;
            let rate = require(o.rate, "rate")?;
            let pop = ingest(Path::new(args), &column, &[])?;
            if pop.dropped > 0 {
                eprintln!("warning: dropped {} of {} population rows", pop.dropped, pop.rows);
            }
            Distribution::empirical(pop.values, rate)?
        }
        other => return Err(CliError::Config(format!("unknown distribution family '{other}'"))),
    };
    d.validate()?;
    Ok(d)
}

/// 1 − α − 3·sqrt(α(1 − α)/T).
pub fn coverage_floor(alpha: f64, runs: usize) -> f64 {
    1.0 - alpha - 3.0 * (alpha * (1.0 - alpha) / runs as f64).sqrt()
}

pub fn run(o: SimOpts, coverage_mode: bool) -> Result<(), CliError> {
    let dist = parse_distribution(&require(o.distribution.clone(), "distribution")?, &o)?;
    let n = match dist {
        Distribution::Empirical { .. } => 0,
        _ => require(o.n, "n")?,
    };
    let budgets: Vec<Budget> = match (o.rho.is_empty(), o.epsilon.is_empty()) {
        (false, true) => o.rho.iter().map(|r| budget(BudgetKind::Zcdp, *r)).collect::<Result<_, _>>()?,
        (true, false) => o.epsilon.iter().map(|e| budget(BudgetKind::PureDp, *e)).collect::<Result<_, _>>()?,
        (false, false) => return Err(CliError::Config("give either --rho or --epsilon, not both".into())),
        (true, true) => Vec::new(),
    };
    if o.mechanisms.is_empty() || budgets.is_empty() {
        return Err(CliError::Config("empty grid: give at least one --mechanism and one budget".into()));
    }
    let mut theta_for = BTreeMap::new();
    for t in &o.theta_for {
        let (name, v) = t.split_once('=').ok_or_else(|| CliError::Config(format!("--theta-for wants NAME=THETA, got '{t}'")))?;
        let kind: MechanismKind = name.trim().parse()?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("bad θ in '{t}'")))?;
        theta_for.insert(kind, v);
    }
    let (default_datasets, default_trials) = if coverage_mode { (1000, 5) } else { (100, 5) };
    let seed = o.common.seed.unwrap_or(0);
    let mut cells: Vec<(ExperimentConfig, Report)> = Vec::new();
    for name in &o.mechanisms {
        let kind: MechanismKind = name.trim().parse()?;
        let mechanism = build_mechanism(name.trim(), &o.common, theta_for.get(&kind).copied())?;
        for b in &budgets {
            if !mechanism.kind.accepts(b.kind()) {
                return Err(CliError::Config(format!("{} needs a zCDP budget (--rho)", mechanism.kind)));
            }
            let cfg = ExperimentConfig {
                distribution: dist.clone(),
                n,
                num_datasets: o.datasets.unwrap_or(default_datasets),
                trials_per_dataset: o.trials.unwrap_or(default_trials),
                mechanism,
                budget: *b,
                seed,
            };
            let report = run_experiment(&cfg)?;
            cells.push((cfg, report));
        }
    }

    let mut records = csv::Writer::from_writer(Vec::new());
    let mut table = csv::Writer::from_writer(Vec::new());
    for (cfg, rep) in &cells {
        let name = cfg.mechanism.kind.to_string();
        for r in &rep.records {
            records
                .serialize(SimRow {
                    mechanism: &name,
                    budget_kind: cfg.budget.kind(),
                    budget: cfg.budget.value(),
                    dataset: r.dataset,
                    trial: r.trial,
                    n: r.n,
                    lower: r.lower,
                    upper: r.upper,
                    point: r.point,
                    np_lower: r.np_lower,
                    np_upper: r.np_upper,
                    rel_width: r.rel_width,
                    covered: r.covered,
                    spent: r.spent,
                    error: r.error.as_deref(),
                })
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        let s = &rep.summary;
        let floor = coverage_floor(s.alpha, s.runs);
        table
            .serialize(CellRow {
                mechanism: &name,
                budget_kind: cfg.budget.kind(),
                budget: cfg.budget.value(),
                n: s.n,
                alpha: s.alpha,
                theta: s.theta,
                runs: s.runs,
                failures: s.failures,
                coverage: s.coverage,
                coverage_floor: floor,
                meets_floor: s.coverage >= floor,
                nonprivate_coverage: s.nonprivate_coverage,
                rel_width_q05: s.rel_width.q05,
                rel_width_q25: s.rel_width.q25,
                rel_width_q50: s.rel_width.q50,
                rel_width_q75: s.rel_width.q75,
                rel_width_q95: s.rel_width.q95,
                bias: s.bias,
                nonprivate_bias: s.nonprivate_bias,
                mean_spend: s.mean_spend,
            })
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let records = records.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    let table = table.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    let summaries: Vec<&Summary> = cells.iter().map(|(_, r)| &r.summary).collect();
    let summary = serde_json::to_string_pretty(&summaries).expect("summary serializes") + "\n";

    let format = o.common.format.unwrap_or(Format::Both);
    match &o.common.output {
        Some(dir) => {
            let dir = output_dir(dir)?;
            if format.records() {
                write_file(&dir.join("records.csv"), &records)?;
            }
            if format.summary() {
                write_file(&dir.join("summary.json"), summary.as_bytes())?;
                write_file(&dir.join("summary.csv"), &table)?;
            }
            if coverage_mode {
                std::io::stdout().write_all(&table).map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        None => std::io::stdout().write_all(&table).map_err(|e| CliError::Config(e.to_string()))?,
    }
    Ok(())
}
