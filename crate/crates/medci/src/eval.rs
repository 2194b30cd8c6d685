//! Monte-Carlo harness: distributions, utility metrics and the dataset × trial sweep.

use std::io::Write;

use rand::seq::index;
use rand::RngCore;
use rand_distr::{Distribution as _, LogNormal, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanism::Mechanism;
use crate::order_stats::{nonprivate_ci, Interval, Sample};
use crate::privacy::{Budget, RngStream};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    Lognormal { mu: f64, sigma: f64 },
    Normal { mu: f64, sigma: f64 },
    Uniform { a: f64, b: f64 },
    /// Simple random samples without replacement at `rate` from a finite population.
    Empirical {
        #[serde(skip)]
        population: Vec<f64>,
        rate: f64,
    },
}

impl Distribution {
    pub fn empirical(mut population: Vec<f64>, rate: f64) -> Result<Self> {
        if population.is_empty() || population.iter().any(|x| !x.is_finite()) {
            return Err(Error::InsufficientData("population must be nonempty and finite".into()));
        }
        if !(rate > 0.0 && rate <= 1.0) {
            return Err(invalid("sampling rate must be in (0,1]"));
        }
        population.sort_by(f64::total_cmp);
        Ok(Distribution::Empirical { population, rate })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::Lognormal { mu, sigma } | Distribution::Normal { mu, sigma } => {
                mu.is_finite() && sigma.is_finite() && sigma > 0.0
            }
            Distribution::Uniform { a, b } => a.is_finite() && b.is_finite() && a < b,
            Distribution::Empirical { ref population, rate } => !population.is_empty() && rate > 0.0 && rate <= 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("bad distribution parameters {self:?}")))
        }
    }

    /// Population median; for a finite population the midpoint of its median set.
    pub fn true_median(&self) -> f64 {
        match *self {
            Distribution::Lognormal { mu, .. } => mu.exp(),
            Distribution::Normal { mu, .. } => mu,
            Distribution::Uniform { a, b } => (a + b) / 2.0,
            Distribution::Empirical { ref population, .. } => {
                let n = population.len();
                if n % 2 == 1 {
                    population[n / 2]
                } else {
                    (population[n / 2 - 1] + population[n / 2]) / 2.0
                }
            }
        }
    }

    /// Sample size used per dataset; fixed by the rate in empirical mode.
    pub fn sample_size(&self, n: usize) -> usize {
        match *self {
            Distribution::Empirical { ref population, rate } => ((population.len() as f64 * rate).round() as usize).max(1),
            _ => n,
        }
    }

    pub fn draw<R: RngCore + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Distribution::Lognormal { mu, sigma } => {
                let d = LogNormal::new(mu, sigma).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Distribution::Normal { mu, sigma } => {
                let d = Normal::new(mu, sigma).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Distribution::Uniform { a, b } => {
                let d = Uniform::new(a, b).expect("validated");
                (0..n).map(|_| d.sample(rng)).collect()
            }
            Distribution::Empirical { ref population, .. } => {
                let n = self.sample_size(n).min(population.len());
                index::sample(rng, population.len(), n).into_iter().map(|i| population[i]).collect()
            }
        }
    }
}

/// DP interval width over the non-private width on the same sample.
pub fn rel_width(s: &Sample, alpha: f64, i: &Interval) -> Result<f64> {
    let base = nonprivate_ci(s, alpha)?;
    rel_width_against(&base, i)
}

pub fn rel_width_against(base: &Interval, i: &Interval) -> Result<f64> {
    if base.width() <= 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok(i.width() / base.width())
}

/// Fraction of intervals containing `median`, endpoints inclusive.
pub fn empirical_coverage(median: f64, intervals: &[Interval]) -> f64 {
    intervals.iter().filter(|i| i.contains(median)).count() as f64 / intervals.len() as f64
}

pub fn bias(estimates: &[f64], median: f64) -> f64 {
    estimates.iter().sum::<f64>() / estimates.len() as f64 - median
}

pub fn midpoint_estimator(i: &Interval) -> f64 {
    i.midpoint()
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub distribution: Distribution,
    pub n: usize,
    pub num_datasets: usize,
    pub trials_per_dataset: usize,
    pub mechanism: Mechanism,
    pub budget: Budget,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        let parametric = !matches!(self.distribution, Distribution::Empirical { .. });
        if (parametric && self.n == 0) || self.num_datasets == 0 || self.trials_per_dataset == 0 {
            return Err(invalid("n, datasets and trials must be positive"));
        }
        Ok(())
    }
}

/// One mechanism run. Failed runs keep `error` and no interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub dataset: usize,
    pub trial: usize,
    pub n: usize,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub point: Option<f64>,
    pub np_lower: Option<f64>,
    pub np_upper: Option<f64>,
    pub rel_width: Option<f64>,
    pub covered: bool,
    pub spent: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Quantiles {
    pub fn of(xs: &[f64]) -> Self {
        Quantiles {
            q05: quantile(xs, 0.05),
            q25: quantile(xs, 0.25),
            q50: quantile(xs, 0.5),
            q75: quantile(xs, 0.75),
            q95: quantile(xs, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub mechanism: String,
    pub distribution: Distribution,
    pub n: usize,
    pub num_datasets: usize,
    pub trials_per_dataset: usize,
    pub budget: Budget,
    pub alpha: f64,
    pub theta: f64,
    pub seed: u64,
    pub true_median: f64,
    pub runs: usize,
    pub failures: usize,
    pub degenerate_baselines: usize,
    pub coverage: f64,
    pub nonprivate_coverage: f64,
    pub rel_width: Quantiles,
    pub bias: f64,
    pub nonprivate_bias: f64,
    pub mean_spend: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub records: Vec<Record>,
    pub summary: Summary,
}

impl Report {
    pub fn write_records_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.records {
            out.serialize(r).map_err(|e| invalid(format!("csv write: {e}")))?;
        }
        out.flush().map_err(|e| invalid(format!("csv write: {e}")))
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Recomputes the aggregates from the records.
pub fn summarize(cfg: &ExperimentConfig, records: &[Record]) -> Summary {
    let truth = cfg.distribution.true_median();
    let ok: Vec<&Record> = records.iter().filter(|r| r.error.is_none()).collect();
    let widths: Vec<f64> = ok.iter().filter_map(|r| r.rel_width).collect();
    let points: Vec<f64> = ok.iter().filter_map(|r| r.point).collect();
    // the baseline is per dataset; count it once
    let baselines: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.trial == 0)
        .filter_map(|r| Some((r.np_lower?, r.np_upper?)))
        .collect();
    let np_cov = baselines.iter().filter(|(l, u)| *l <= truth && truth <= *u).count() as f64 / baselines.len() as f64;
    let np_points: Vec<f64> = baselines.iter().map(|(l, u)| (l + u) / 2.0).collect();
    Summary {
        schema_version: SCHEMA_VERSION,
        mechanism: cfg.mechanism.kind.to_string(),
        distribution: cfg.distribution.clone(),
        n: cfg.distribution.sample_size(cfg.n),
        num_datasets: cfg.num_datasets,
        trials_per_dataset: cfg.trials_per_dataset,
        budget: cfg.budget,
        alpha: cfg.mechanism.params.alpha,
        theta: cfg.mechanism.params.range.theta(),
        seed: cfg.seed,
        true_median: truth,
        runs: records.len(),
        failures: records.len() - ok.len(),
        degenerate_baselines: ok.iter().filter(|r| r.rel_width.is_none()).count(),
        coverage: records.iter().filter(|r| r.covered).count() as f64 / records.len() as f64,
        nonprivate_coverage: np_cov,
        rel_width: Quantiles::of(&widths),
        bias: bias(&points, truth),
        nonprivate_bias: bias(&np_points, truth),
        mean_spend: records.iter().map(|r| r.spent).sum::<f64>() / records.len() as f64,
    }
}

/// Datasets come from stream 0 keyed by dataset id, so every mechanism sees
/// the same data for a given seed; runs use stream 1 keyed by (dataset, trial).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let truth = cfg.distribution.true_median();
    let alpha = cfg.mechanism.params.alpha;
    let per_dataset: Vec<Vec<Record>> = (0..cfg.num_datasets)
        .into_par_iter()
        .map(|d| {
            let mut data_rng = RngStream::new(cfg.seed, 0).child(d as u64);
            let raw = cfg.distribution.draw(cfg.n, &mut data_rng);
            let n = raw.len();
            let sample = Sample::new(raw);
            let base = sample.as_ref().ok().and_then(|s| nonprivate_ci(s, alpha).ok());
            (0..cfg.trials_per_dataset)
                .map(|t| {
                    let mut rng = RngStream::new(cfg.seed, 1).child(d as u64).child(t as u64);
                    let mut rec = Record {
                        dataset: d,
                        trial: t,
                        n,
                        lower: None,
                        upper: None,
                        point: None,
                        np_lower: base.map(|b| b.lower),
                        np_upper: base.map(|b| b.upper),
                        rel_width: None,
                        covered: false,
                        spent: 0.0,
                        error: None,
                    };
                    let run = sample.as_ref().map_err(Clone::clone).and_then(|s| cfg.mechanism.run(s, cfg.budget, &mut rng));
                    match run {
                        Ok(rel) => {
                            let i = rel.interval;
                            rec.lower = Some(i.lower);
                            rec.upper = Some(i.upper);
                            rec.point = Some(midpoint_estimator(&i));
                            rec.rel_width = base.and_then(|b| rel_width_against(&b, &i).ok());
                            rec.covered = i.contains(truth);
                            rec.spent = rel.ledger.spent();
                        }
                        Err(e) => rec.error = Some(e.to_string()),
                    }
                    rec
                })
                .collect()
        })
        .collect();
    let records: Vec<Record> = per_dataset.into_iter().flatten().collect();
    let summary = summarize(cfg, &records);
    Ok(Report { records, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{Hyperparams, MechanismKind};
    use crate::order_stats::RangeSpec;

    #[test]
    fn metrics() {
        let s = Sample::new((1..=101).map(f64::from).collect()).unwrap();
        let np = nonprivate_ci(&s, 0.05).unwrap();
        assert_eq!(rel_width(&s, 0.05, &np).unwrap(), 1.0);
        let twice = Interval::hull(np.lower, np.lower + 2.0 * np.width());
        assert_eq!(rel_width(&s, 0.05, &twice).unwrap(), 2.0);
        let flat = Sample::new(vec![3.0; 50]).unwrap();
        assert!(matches!(rel_width(&flat, 0.05, &np), Err(Error::DegenerateBaseline)));
        let is = [Interval::hull(0.0, 1.0), Interval::hull(1.0, 2.0), Interval::hull(2.0, 3.0)];
        assert_eq!(empirical_coverage(1.0, &is), 2.0 / 3.0);
        assert_eq!(bias(&[1.0, 3.0], 2.0), 0.0);
        assert_eq!(bias(&[2.5, 2.5], 2.0), 0.5);
        assert_eq!(midpoint_estimator(&Interval::hull(469.99, 508.01)), 489.0);
        assert_eq!(midpoint_estimator(&Interval::hull(4.0, 4.0)), 4.0);
    }

    #[test]
    fn empirical_median_is_midpoint() {
        let d = Distribution::empirical(vec![4.0, 1.0, 3.0, 2.0], 0.5).unwrap();
        assert_eq!(d.true_median(), 2.5);
        assert_eq!(d.sample_size(999), 2);
        assert_eq!(Distribution::Lognormal { mu: 1.5f64.ln(), sigma: 1.0 }.true_median(), 1.5);
    }

    #[test]
    fn deterministic_and_recomputable() {
        let params = Hyperparams::new(0.05, RangeSpec::new(-5.0, 15.0, 0.5).unwrap());
        let cfg = ExperimentConfig {
            distribution: Distribution::Lognormal { mu: 1.5f64.ln(), sigma: 1.0 },
            n: 200,
            num_datasets: 6,
            trials_per_dataset: 2,
            mechanism: Mechanism::new(MechanismKind::Cdf, params),
            budget: Budget::zcdp(1.0).unwrap(),
            seed: 11,
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        let (mut wa, mut wb) = (Vec::new(), Vec::new());
        a.write_records_csv(&mut wa).unwrap();
        b.write_records_csv(&mut wb).unwrap();
        assert_eq!(wa, wb);
        assert_eq!(a.summary_json(), b.summary_json());
        assert_eq!(summarize(&cfg, &a.records), a.summary);
        assert_eq!(a.records.len(), 12);
        assert!((a.summary.mean_spend - 1.0).abs() < 1e-12);
    }
}
