//! `medci ci`: one interval per group, with the budget split across
//! characteristics. Groups within a characteristic are disjoint, so each gets
//! the characteristic's full share.

use std::io::Write;

use medci::binsearch::write_measurements_csv;
use medci::privacy::split;
use medci::{Budget, BudgetKind, Guarantee, Release, RngStream, Sample, SideInfo};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::ingest::{ingest, GroupKey};
use crate::opts::{CiOpts, Format};
use crate::{build_mechanism, budget, output_dir, require, write_file, CliError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
struct Row<'a> {
    characteristic: &'a str,
    group: &'a str,
    n: usize,
    mechanism: String,
    alpha: f64,
    budget_kind: BudgetKind,
    budget: f64,
    spent: Option<f64>,
    lower: Option<f64>,
    upper: Option<f64>,
    lower_display: Option<f64>,
    truncated: bool,
    point: Option<f64>,
    guarantee: Option<String>,
    error: Option<String>,
}

struct GroupResult {
    characteristic: String,
    group: String,
    n: usize,
    share: Budget,
    release: Result<Release, medci::Error>,
}

fn guarantee_label(g: &Guarantee) -> String {
    match g {
        Guarantee::Exact => "exact".into(),
        Guarantee::BetaGood { beta, a } => format!("beta_good(beta={beta},a={a})"),
    }
}

fn file_stem(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

pub fn run(o: CiOpts) -> Result<(), CliError> {
    let input = require(o.input.clone(), "input")?;
    let column = require(o.column.clone(), "column")?;
    let mech_name = require(o.mechanism.clone(), "mechanism")?;
    let total = match (o.rho, o.epsilon) {
        (Some(r), None) => budget(BudgetKind::Zcdp, r)?,
        (None, Some(e)) => budget(BudgetKind::PureDp, e)?,
        (Some(_), Some(_)) => return Err(CliError::Config("give either --rho or --epsilon, not both".into())),
        (None, None) => return Err(CliError::Config("--rho or --epsilon is required".into())),
    };
    let mechanism = build_mechanism(&mech_name, &o.common, None)?;
    if !mechanism.kind.accepts(total.kind()) {
        return Err(CliError::Config(format!("{} needs a zCDP budget (--rho)", mechanism.kind)));
    }
    let keys: Vec<GroupKey> = o.group_by.iter().map(|g| GroupKey::parse(g)).collect();
    let fractions = if o.split.is_empty() {
        vec![1.0 / keys.len().max(1) as f64; keys.len().max(1)]
    } else {
        o.split.clone()
    };
    if fractions.len() != keys.len().max(1) {
        return Err(CliError::Config(format!("--split has {} fractions for {} characteristics", fractions.len(), keys.len().max(1))));
    }
    let shares = split(total, &fractions)?;

    let data = ingest(&input, &column, &keys)?;
    if data.dropped > 0 {
        eprintln!("warning: dropped {} of {} rows with a missing or non-numeric '{column}'", data.dropped, data.rows);
    }
    let seed = o.common.seed.unwrap_or(0);
    let mut jobs: Vec<(usize, String, String, Vec<f64>)> = Vec::new();
    if keys.is_empty() {
        jobs.push((0, "all".into(), "all".into(), data.values.clone()));
    } else {
        for (ci, ch) in data.characteristics.iter().enumerate() {
            for (label, vals) in &ch.groups {
                jobs.push((ci, ch.name.clone(), label.clone(), vals.clone()));
            }
        }
    }
    let results: Vec<GroupResult> = jobs
        .into_par_iter()
        .enumerate()
        .map(|(j, (ci, characteristic, group, vals))| {
            let n = vals.len();
            let share = shares[ci];
            let mut rng = RngStream::new(seed, ci as u64).child(j as u64);
            let release = Sample::new(vals).and_then(|s| mechanism.run(&s, share, &mut rng));
            GroupResult { characteristic, group, n, share, release }
        })
        .collect();

    let truncate = o.truncate_nonneg.unwrap_or(false);
    let rows: Vec<Row> = results
        .iter()
        .map(|r| {
            let ok = r.release.as_ref().ok();
            let lower = ok.map(|x| x.interval.lower);
            let truncated = truncate && lower.is_some_and(|l| l < 0.0);
            Row {
                characteristic: &r.characteristic,
                group: &r.group,
                n: r.n,
                mechanism: mechanism.kind.to_string(),
                alpha: mechanism.params.alpha,
                budget_kind: r.share.kind(),
                budget: r.share.value(),
                spent: ok.map(|x| x.ledger.spent()),
                lower,
                upper: ok.map(|x| x.interval.upper),
                lower_display: lower.map(|l| if truncated { 0.0 } else { l }),
                truncated,
                // computed before any display truncation
                point: ok.map(|x| x.point()),
                guarantee: ok.map(|x| guarantee_label(&x.guarantee)),
                error: r.release.as_ref().err().map(|e| e.to_string()),
            }
        })
        .collect();

    let mut records = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        records.serialize(row).map_err(|e| CliError::Config(e.to_string()))?;
    }
    let records = records.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "ci",
        "input": input.display().to_string(),
        "column": column,
        "rows": data.rows,
        "dropped": data.dropped,
        "mechanism": mechanism.kind.to_string(),
        "alpha": mechanism.params.alpha,
        "range": [mechanism.params.range.lower(), mechanism.params.range.upper()],
        "theta": mechanism.params.range.theta(),
        "continuity": mechanism.continuity.map(|c| json!({"sigma": c.sigma(), "beta": c.beta(), "a": c.a()})),
        "budget": total,
        "split": fractions,
        "seed": seed,
        "groups": results.iter().zip(&rows).map(|(r, row)| json!({
            "characteristic": r.characteristic,
            "group": r.group,
            "n": r.n,
            "interval": row.lower.zip(row.upper).map(|(l, u)| [l, u]),
            "lower_display": row.lower_display,
            "point": row.point,
            "guarantee": r.release.as_ref().ok().map(|x| x.guarantee),
            "ledger": r.release.as_ref().ok().map(|x| json!({
                "kind": x.ledger.kind(),
                "allocated": r.share.value(),
                "spent": x.ledger.spent(),
                "charges": x.ledger.charges(),
            })),
            "error": row.error,
        })).collect::<Vec<_>>(),
    });
    let summary = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";

    let format = o.common.format.unwrap_or(Format::Both);
    match &o.common.output {
        Some(dir) => {
            let dir = output_dir(dir)?;
            if format.records() {
                write_file(&dir.join("intervals.csv"), &records)?;
                for r in &results {
                    let stem = format!("{}__{}", file_stem(&r.characteristic), file_stem(&r.group));
                    if let Ok(rel) = &r.release {
                        write_side(&dir, &stem, &rel.side)?;
                    }
                }
            }
            if format.summary() {
                write_file(&dir.join("summary.json"), summary.as_bytes())?;
            }
        }
        None => {
            let out = if format.records() { records } else { summary.into_bytes() };
            std::io::stdout().write_all(&out).map_err(|e| CliError::Config(e.to_string()))?;
        }
    }
    for r in &results {
        if let Err(e) = &r.release {
            eprintln!("group {}={}: {e}", r.characteristic, r.group);
        }
    }
    match results.iter().find_map(|r| r.release.as_ref().err()) {
        Some(e) => Err(e.clone().into()),
        None => Ok(()),
    }
}

fn write_side(dir: &std::path::Path, stem: &str, side: &SideInfo) -> Result<(), CliError> {
    let cdf_file = |cdf: &medci::cdf_tree::NoisyCdf| -> Result<(), CliError> {
        let mut buf = Vec::new();
        cdf.write_csv(&mut buf).map_err(|e| CliError::Config(e.to_string()))?;
        write_file(&dir.join(format!("cdf__{stem}.csv")), &buf)
    };
    let ms_file = |ms: &[medci::binsearch::Measurement]| -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_measurements_csv(ms, &mut buf).map_err(|e| CliError::Config(e.to_string()))?;
        write_file(&dir.join(format!("measurements__{stem}.csv")), &buf)
    };
    match side {
        SideInfo::None => Ok(()),
        SideInfo::Cdf(c) => cdf_file(c),
        SideInfo::Measurements(ms) => ms_file(ms),
        SideInfo::Hybrid { measurements, cdf } => {
            ms_file(measurements)?;
            cdf.as_ref().map_or(Ok(()), cdf_file)
        }
    }
}
