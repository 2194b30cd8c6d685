//! Samples, ranks, the non-private order-statistic interval and the
//! continuity transform.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::privacy::sample_gaussian;
use crate::special::{binom_half_cdf, normal_upper_quantile};

/// A sorted, finite, nonempty dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    values: Vec<f64>,
}

impl Sample {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InsufficientData("sample is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("sample contains a non-finite value {v}")));
        }
        values.sort_by(f64::total_cmp);
        Ok(Sample { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// d_(k), 1-indexed.
    pub fn order_stat(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.n(), "order statistic {k} out of 1..={}", self.n());
        self.values[k - 1]
    }

    /// Number of values ≤ x.
    pub fn rank(&self, x: f64) -> usize {
        self.values.partition_point(|v| *v <= x)
    }

    /// Project every value onto [r_l, r_u].
    pub fn clip(&self, r: &RangeSpec) -> Sample {
        // clamping is monotone, so order is preserved
        let values = self.values.iter().map(|v| v.clamp(r.lower(), r.upper())).collect();
        Sample { values }
    }
}

pub fn rank(s: &Sample, x: f64) -> usize {
    s.rank(x)
}

pub fn clip(s: &Sample, r: &RangeSpec) -> Sample {
    s.clip(r)
}

/// The promised bracket R = [r_l, r_u] on the median and the granularity θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeSpec {
    lower: f64,
    upper: f64,
    theta: f64,
}

impl RangeSpec {
    pub fn new(lower: f64, upper: f64, theta: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(invalid(format!("range must satisfy r_l < r_u, got [{lower}, {upper}]")));
        }
        if !(theta >= 0.0 && theta <= upper - lower) {
            return Err(invalid(format!("granularity {theta} must lie in [0, {}]", upper - lower)));
        }
        Ok(RangeSpec { lower, upper, theta })
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        RangeSpec::new(self.lower, self.upper, theta)
    }
}

/// A closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(invalid(format!("interval needs lower <= upper, got [{lower}, {upper}]")));
        }
        Ok(Interval { lower, upper })
    }

    /// Interval spanned by two points given in either order.
    pub fn hull(a: f64, b: f64) -> Self {
        Interval { lower: a.min(b), upper: a.max(b) }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Order-statistic indices of the non-private interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankTargets {
    pub k_low: usize,
    pub k_up: usize,
}

/// k_low = max{m : C(m) ≤ α/2} and k_up = min{m : C(m) ≥ 1 − α/2} for Bin(n, 1/2).
pub fn nonprivate_ci_ranks(n: usize, alpha: f64) -> Result<RankTargets> {
    if n == 0 {
        return Err(Error::InsufficientData("n must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let n64 = n as u64;
    let cdf = |m: i64| binom_half_cdf(n64, m);
    // first m in [0, n] with C(m) > α/2; k_low is the one before it
    let first_above = partition(0, n as i64, |m| cdf(m) <= alpha / 2.0);
    let k_low = first_above - 1;
    let k_up = partition(0, n as i64, |m| cdf(m) < 1.0 - alpha / 2.0);
    if k_low < 1 {
        return Err(Error::InsufficientData(format!(
            "n = {n} is too small for a {:.4} confidence interval",
            1.0 - alpha
        )));
    }
    if k_up as usize > n {
        return Err(Error::InsufficientData(format!("upper rank exceeds n = {n}")));
    }
    Ok(RankTargets { k_low: k_low as usize, k_up: k_up as usize })
}

// Smallest m in [lo, hi+1] for which pred(m) is false, pred monotone true→false.
fn partition(lo: i64, hi: i64, pred: impl Fn(i64) -> bool) -> i64 {
    let (mut a, mut b) = (lo, hi + 1);
    while a < b {
        let mid = a + (b - a) / 2;
        if pred(mid) {
            a = mid + 1;
        } else {
            b = mid;
        }
    }
    a
}

/// [d_(k_low), d_(k_up)].
pub fn nonprivate_ci(s: &Sample, alpha: f64) -> Result<Interval> {
    let t = nonprivate_ci_ranks(s.n(), alpha)?;
    Ok(Interval { lower: s.order_stat(t.k_low), upper: s.order_stat(t.k_up) })
}

/// Gaussian smoothing used to turn a CI for continuous data into a β-good CI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuityConfig {
    sigma: f64,
    beta: f64,
    a: f64,
}

impl ContinuityConfig {
    pub fn new(sigma: f64, beta: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid(format!("continuity noise scale must be positive, got {sigma}")));
        }
        if !(beta > 0.0 && beta < 0.5) {
            return Err(invalid(format!("beta must lie in (0, 1/2), got {beta}")));
        }
        Ok(ContinuityConfig { sigma, beta, a: sigma * normal_upper_quantile(beta) })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Widening radius Φ_σ⁻¹(1 − β).
    pub fn a(&self) -> f64 {
        self.a
    }
}

/// Adds i.i.d. N(0, σ_c²) to every value and re-sorts.
pub fn continuity_transform<R: RngCore + ?Sized>(s: &Sample, cfg: &ContinuityConfig, rng: &mut R) -> Sample {
    let mut values: Vec<f64> = s.values.iter().map(|v| sample_gaussian(rng, *v, cfg.sigma)).collect();
    values.sort_by(f64::total_cmp);
    Sample { values }
}

pub fn widen(i: &Interval, cfg: &ContinuityConfig) -> Interval {
    Interval { lower: i.lower - cfg.a, upper: i.upper + cfg.a }
}
