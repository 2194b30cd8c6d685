//! θ-widened exponential mechanism for order statistics and the ExpMech
//! confidence interval.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::order_stats::{nonprivate_ci_ranks, Interval, RangeSpec, Sample};
use crate::privacy::{sample_gumbel, sample_uniform};
use crate::special::BinomialHalf;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMechConfig {
    /// Total pure-DP budget of the interval; each endpoint uses half.
    pub epsilon: f64,
    pub range: RangeSpec,
    pub alpha: f64,
    pub union: bool,
    /// Share of α reserved for the privacy error on the union path.
    pub beta2: f64,
}

impl ExpMechConfig {
    pub fn tight(epsilon: f64, range: RangeSpec, alpha: f64) -> Result<Self> {
        ExpMechConfig { epsilon, range, alpha, union: false, beta2: alpha / 2.0 }.validated()
    }

    pub fn union(epsilon: f64, range: RangeSpec, alpha: f64, beta2: f64) -> Result<Self> {
        ExpMechConfig { epsilon, range, alpha, union: true, beta2 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.epsilon > 0.0) {
            return Err(invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(2.0 * self.range.theta() < self.range.width()) {
            return Err(invalid("the exponential mechanism needs 2θ < |R|"));
        }
        if self.union && !(self.beta2 > 0.0 && self.beta2 < self.alpha) {
            return Err(invalid(format!("beta2 must lie in (0, alpha), got {}", self.beta2)));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpMechTargets {
    pub k_l: usize,
    pub k_u: usize,
    /// Rank error that each endpoint exceeds with probability at most its failure share.
    pub t: f64,
}

/// One candidate output interval of the widened mechanism.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub lo: f64,
    pub hi: f64,
    /// Widened-data rank of every point strictly inside the gap.
    pub rank: usize,
    pub score: f64,
}

/// Scored gaps of the widened dataset.
///
/// The first k clipped points move left by θ and the rest move right by θ,
/// saturating at the range ends; the range ends are then appended. A point
/// strictly inside gap j (between sorted entries j−1 and j, counting the
/// inserted r_l as entry 0) has widened rank j−1. Its score is
/// ln(width) − (ε/2)·|rank − k|, or −∞ for an empty gap.
pub fn gaps(s: &Sample, epsilon: f64, k: usize, r: &RangeSpec) -> Vec<Gap> {
    let (lo, hi, theta) = (r.lower(), r.upper(), r.theta());
    let mut e = Vec::with_capacity(s.n() + 2);
    e.push(lo);
    for (i, v) in s.values().iter().enumerate() {
        let c = v.clamp(lo, hi);
        e.push(if i < k { (c - theta).max(lo) } else { (c + theta).min(hi) });
    }
    e.push(hi);
    (1..e.len())
        .map(|j| {
            let width = e[j] - e[j - 1];
            let rank = j - 1;
            let dist = rank.abs_diff(k) as f64;
            let score = if width > 0.0 { width.ln() - 0.5 * epsilon * dist } else { f64::NEG_INFINITY };
            Gap { lo: e[j - 1], hi: e[j], rank, score }
        })
        .collect()
}

/// Index of the largest score after adding independent Gumbel noise, which is
/// a draw from the softmax of the scores. `None` if every score is −∞.
pub fn gumbel_argmax<R: RngCore + ?Sized>(scores: &[f64], rng: &mut R) -> Option<usize> {
    let mut best = None;
    let mut best_val = f64::NEG_INFINITY;
    for (i, s) in scores.iter().enumerate() {
        if *s == f64::NEG_INFINITY {
            continue;
        }
        let v = s + sample_gumbel(rng);
        if best.is_none() || v > best_val {
            best = Some(i);
            best_val = v;
        }
    }
    best
}

fn check_rank(s: &Sample, k: usize, r: &RangeSpec) -> Result<()> {
    if k < 1 || k > s.n() {
        return Err(invalid(format!("target rank {k} outside 1..={}", s.n())));
    }
    if !(2.0 * r.theta() < r.width()) {
        return Err(invalid("the exponential mechanism needs 2θ < |R|"));
    }
    Ok(())
}

/// ε-DP draw from [r_l, r_u] with density ∝ exp(ε·u(d,x)/2), where u is the
/// θ-widened distance of x's rank from k.
pub fn widened_exp_mech<R: RngCore + ?Sized>(
    s: &Sample,
    epsilon: f64,
    k: usize,
    r: &RangeSpec,
    rng: &mut R,
) -> Result<f64> {
    check_rank(s, k, r)?;
    let g = gaps(s, epsilon, k, r);
    let scores: Vec<f64> = g.iter().map(|g| g.score).collect();
    let j = gumbel_argmax(&scores, rng).expect("r_l < r_u leaves a gap of positive width");
    Ok(sample_uniform(rng, g[j].lo, g[j].hi))
}

/// t = ln((|R| − 2θ)/(2θβ))/ε.
pub fn rank_error_bound(epsilon: f64, width: f64, theta: f64, beta: f64) -> Result<f64> {
    if !(2.0 * theta < width) {
        return Err(invalid("rank error bound needs 2θ < |R|"));
    }
    if !(beta > 0.0 && beta < 1.0) || !(epsilon > 0.0) {
        return Err(invalid("rank error bound needs ε > 0 and β in (0,1)"));
    }
    Ok(((width - 2.0 * theta) / (2.0 * theta * beta)).ln() / epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// Upper bound on the probability that the one-sided endpoint at rank k,
/// released with ε/2, misses the median. `epsilon` is the total interval budget.
pub fn failure_prob(n: usize, k: usize, epsilon: f64, width: f64, theta: f64, side: Side) -> f64 {
    failure_prob_with(&BinomialHalf::new(n as u64), k, epsilon, width, theta, side)
}

pub fn failure_prob_with(bin: &BinomialHalf, k: usize, epsilon: f64, width: f64, theta: f64, side: Side) -> f64 {
    let n = bin.n() as usize;
    let k = match side {
        Side::Lower => k,
        Side::Upper => n + 1 - k,
    };
    let b = (width - 2.0 * theta) / (2.0 * theta);
    let pmf = bin.pmf_slice();
    let mut p = bin.cdf(k as i64 - 1);
    for (m, mass) in pmf.iter().enumerate().skip(k) {
        let f = b * (-((m - k) as f64) * epsilon / 2.0).exp();
        if !(f < 1.0) {
            p += mass;
        } else {
            if f < 1e-18 {
                break;
            }
            p += mass * f;
        }
    }
    p.min(1.0)
}

type TargetKey = (usize, u64, u64, u64, u64, u64, bool, u64);

fn targets_cache() -> &'static Mutex<HashMap<TargetKey, ExpMechTargets>> {
    static CACHE: OnceLock<Mutex<HashMap<TargetKey, ExpMechTargets>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Target ranks for the two endpoints.
pub fn compute_targets(n: usize, cfg: &ExpMechConfig) -> Result<ExpMechTargets> {
    let cfg = cfg.validated()?;
    let key = (
        n,
        cfg.epsilon.to_bits(),
        cfg.range.lower().to_bits(),
        cfg.range.upper().to_bits(),
        cfg.range.theta().to_bits(),
        cfg.alpha.to_bits(),
        cfg.union,
        cfg.beta2.to_bits(),
    );
    if let Some(t) = targets_cache().lock().unwrap().get(&key) {
        return Ok(*t);
    }
    let t = if cfg.union { union_targets(n, &cfg)? } else { tight_targets(n, &cfg)? };
    targets_cache().lock().unwrap().insert(key, t);
    Ok(t)
}

fn union_targets(n: usize, cfg: &ExpMechConfig) -> Result<ExpMechTargets> {
    let beta1 = (cfg.alpha - cfg.beta2) / (1.0 - cfg.beta2 / 2.0);
    let ranks = nonprivate_ci_ranks(n, beta1)?;
    let t = rank_error_bound(cfg.epsilon / 2.0, cfg.range.width(), cfg.range.theta(), cfg.beta2 / 2.0)?;
    let k_l = (ranks.k_low as f64 - t).floor();
    let k_u = (ranks.k_up as f64 + t).ceil();
    if k_l < 1.0 || k_u > n as f64 {
        return Err(Error::NoValidTarget(format!(
            "rank error bound {t:.2} leaves no valid target for n = {n}"
        )));
    }
    Ok(ExpMechTargets { k_l: k_l as usize, k_u: k_u as usize, t })
}

fn tight_targets(n: usize, cfg: &ExpMechConfig) -> Result<ExpMechTargets> {
    let bin = BinomialHalf::new(n as u64);
    let (eps, w, theta) = (cfg.epsilon, cfg.range.width(), cfg.range.theta());
    let half = cfg.alpha / 2.0;
    let mid = n.div_ceil(2);
    let k_l = (1..=mid)
        .rev()
        .find(|k| failure_prob_with(&bin, *k, eps, w, theta, Side::Lower) <= half);
    let k_u = (mid..=n).find(|k| failure_prob_with(&bin, *k, eps, w, theta, Side::Upper) <= half);
    match (k_l, k_u) {
        (Some(k_l), Some(k_u)) => {
            let t = rank_error_bound(eps / 2.0, w, theta, half).unwrap_or(0.0).max(0.0);
            Ok(ExpMechTargets { k_l, k_u, t })
        }
        _ => Err(Error::NoValidTarget(format!(
            "no rank achieves failure probability {half} with n = {n} and epsilon = {eps}"
        ))),
    }
}

/// ExpMech interval: two ε/2 draws, each shifted outward by θ.
pub fn exp_mech_ci<R: RngCore + ?Sized>(s: &Sample, cfg: &ExpMechConfig, rng: &mut R) -> Result<Interval> {
    let t = compute_targets(s.n(), cfg)?;
    let half = cfg.epsilon / 2.0;
    let theta = cfg.range.theta();
    let a = widened_exp_mech(s, half, t.k_l, &cfg.range, rng)?;
    let b = widened_exp_mech(s, half, t.k_u, &cfg.range, rng)?;
    Ok(Interval::hull(a - theta, b + theta))
}

/// Point estimate of the median using the whole budget at rank ⌈n/2⌉.
pub fn exp_mech_point<R: RngCore + ?Sized>(s: &Sample, epsilon: f64, r: &RangeSpec, rng: &mut R) -> Result<f64> {
    widened_exp_mech(s, epsilon, s.n().div_ceil(2), r, rng)
}
