//! Delimited-file ingestion. Values are parsed and kept as-is; cells that do
//! not parse to a finite number are dropped and counted.

use std::collections::BTreeMap;
use std::path::Path;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
    Ne,
}

impl Op {
    const ALL: [(&'static str, Op); 6] = [(">=", Op::Ge), ("<=", Op::Le), ("!=", Op::Ne), ("==", Op::Eq), (">", Op::Gt), ("<", Op::Lt)];

    fn symbol(self) -> &'static str {
        Op::ALL.iter().find(|(_, o)| *o == self).map(|(s, _)| *s).unwrap()
    }

    fn negate(self) -> Op {
        match self {
            Op::Ge => Op::Lt,
            Op::Gt => Op::Le,
            Op::Le => Op::Gt,
            Op::Lt => Op::Ge,
            Op::Eq => Op::Ne,
            Op::Ne => Op::Eq,
        }
    }

    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Op::Ge => a >= b,
            Op::Gt => a > b,
            Op::Le => a <= b,
            Op::Lt => a < b,
            Op::Eq => a == b,
            Op::Ne => a != b,
        }
    }
}

/// A grouping characteristic: a categorical column, or a numeric predicate
/// such as `age>=65` that splits rows in two.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupKey {
    Column(String),
    Predicate { column: String, op: Op, value: f64 },
}

pub const MISSING: &str = "(missing)";

impl GroupKey {
    pub fn parse(s: &str) -> GroupKey {
        for (sym, op) in Op::ALL {
            if let Some((col, rhs)) = s.split_once(sym) {
                if let Ok(value) = rhs.trim().parse::<f64>() {
                    return GroupKey::Predicate { column: col.trim().to_string(), op, value };
                }
            }
        }
        GroupKey::Column(s.trim().to_string())
    }

    pub fn column(&self) -> &str {
        match self {
            GroupKey::Column(c) | GroupKey::Predicate { column: c, .. } => c,
        }
    }

    pub fn name(&self) -> String {
        match self {
            GroupKey::Column(c) => c.clone(),
            GroupKey::Predicate { column, op, value } => format!("{column}{}{value}", op.symbol()),
        }
    }

    fn label(&self, cell: &str) -> String {
        let cell = cell.trim();
        match self {
            GroupKey::Column(_) if cell.is_empty() => MISSING.to_string(),
            GroupKey::Column(_) => cell.to_string(),
            GroupKey::Predicate { column, op, value } => match cell.parse::<f64>() {
                Ok(x) if !x.is_nan() => {
                    let op = if op.holds(x, *value) { *op } else { op.negate() };
                    format!("{column}{}{value}", op.symbol())
                }
                _ => MISSING.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Characteristic {
    pub name: String,
    pub groups: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub rows: usize,
    pub dropped: usize,
    pub values: Vec<f64>,
    pub characteristics: Vec<Characteristic>,
}

pub fn ingest(path: &Path, column: &str, keys: &[GroupKey]) -> Result<Ingested, CliError> {
    let data_err = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| data_err(e.to_string()))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| data_err(format!("no column named '{name}'")))
    };
    let value_idx = find(column)?;
    let key_idx = keys.iter().map(|k| find(k.column())).collect::<Result<Vec<_>, _>>()?;
    let mut out = Ingested {
        rows: 0,
        dropped: 0,
        values: Vec::new(),
        characteristics: keys.iter().map(|k| Characteristic { name: k.name(), groups: BTreeMap::new() }).collect(),
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| data_err(format!("unparsable record: {e}")))?;
        out.rows += 1;
        let v = match rec.get(value_idx).map(str::trim).and_then(|c| c.parse::<f64>().ok()) {
            Some(v) if v.is_finite() => v,
            _ => {
                out.dropped += 1;
                continue;
            }
        };
        out.values.push(v);
        for ((key, idx), ch) in keys.iter().zip(&key_idx).zip(&mut out.characteristics) {
            ch.groups.entry(key.label(rec.get(*idx).unwrap_or(""))).or_default().push(v);
        }
    }
    if out.values.is_empty() {
        return Err(data_err(format!("no usable numeric values in column '{column}'")));
    }
    Ok(out)
}
