//! Adaptive noisy binary search for the interval endpoints and the
//! union-bound post-processing shared with the tree mechanism.

use std::io::Write;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::order_stats::{nonprivate_ci_ranks, Interval, RangeSpec, RankTargets, Sample};
use crate::privacy::{sample_gaussian, Ledger};
use crate::special::normal_upper_quantile;

/// An averaged noisy rank query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub x: f64,
    /// Mean of the noisy counts, on the count scale.
    pub noisy_rank: f64,
    /// Variance of the mean.
    pub variance: f64,
    /// Number of Gaussian draws averaged; zero for measurements not drawn here.
    pub draws: u32,
}

pub fn write_measurements_csv<W: Write>(ms: &[Measurement], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["x", "noisy_rank", "variance"])?;
    for m in ms {
        out.write_record([m.x.to_string(), m.noisy_rank.to_string(), m.variance.to_string()])?;
    }
    out.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSearchConfig {
    pub alpha: f64,
    pub range: RangeSpec,
    /// Share of α given to sampling error: β₁ = γα.
    pub gamma: f64,
    pub lb: f64,
    pub ub: f64,
}

impl BinSearchConfig {
    pub fn standalone(alpha: f64, range: RangeSpec, gamma: f64) -> Self {
        BinSearchConfig { alpha, range, gamma, lb: 0.5, ub: 0.5 }
    }
}

/// Quantities derived from a [`BinSearchConfig`] for one (n, ρ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub base: BinSearchConfig,
    pub n: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub targets: RankTargets,
    pub m_steps: f64,
    pub rho_step: f64,
    pub beta_step: f64,
    /// Per-step rank error as a fraction of n.
    pub t_step: f64,
    pub q_l: f64,
    pub q_u: f64,
}

impl SearchConfig {
    pub fn new(cfg: &BinSearchConfig, n: usize, rho: f64) -> Result<Self> {
        let theta = cfg.range.theta();
        if !(theta > 0.0) {
            return Err(invalid("binary search needs θ > 0"));
        }
        if !(rho > 0.0) {
            return Err(invalid(format!("rho must be positive, got {rho}")));
        }
        if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) || !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
            return Err(invalid("binary search needs alpha and gamma in (0,1)"));
        }
        if !(cfg.lb > 0.0 && cfg.lb <= 0.5 && cfg.ub >= 0.5 && cfg.ub < 1.0) {
            return Err(invalid("binary search needs 0 < LB <= 1/2 <= UB < 1"));
        }
        let beta1 = cfg.gamma * cfg.alpha;
        let beta2 = (cfg.alpha - beta1) / (1.0 - beta1 / 2.0);
        let targets = nonprivate_ci_ranks(n, beta1)?;
        let m_steps = (cfg.range.width() / theta).log2().max(1.0);
        let rho_step = rho / (2.0 * m_steps);
        let beta_step = beta2 / (2.0 * m_steps);
        let nf = n as f64;
        let t_step = ((1.0 / beta_step).ln() / rho_step).sqrt() / nf;
        let edge = 0.5 / nf;
        let q_l = cfg.lb.min(targets.k_low as f64 / nf - t_step).max(edge);
        let q_u = cfg.ub.max(targets.k_up as f64 / nf + t_step).min(1.0 - edge);
        Ok(SearchConfig { base: *cfg, n, beta1, beta2, targets, m_steps, rho_step, beta_step, t_step, q_l, q_u })
    }
}

/// One bisection toward the point whose rank is n·q, spending at most `rho`.
/// Returns `prev` followed by the new measurements.
pub fn get_noisy_counts<R: RngCore + ?Sized>(
    s: &Sample,
    rho: f64,
    q: f64,
    cfg: &SearchConfig,
    prev: &[Measurement],
    rng: &mut R,
    ledger: &mut Ledger,
) -> Vec<Measurement> {
    let rho_init = cfg.rho_step / 10.0;
    let beta_init = cfg.beta_step / 10.0;
    let sd = (1.0 / (2.0 * rho_init)).sqrt();
    let draw_var = sd * sd;
    // whole draws that fit in the budget, counted exactly
    let mut budget_draws = (rho / rho_init).floor() as u64;
    while (budget_draws + 1) as f64 * rho_init <= rho {
        budget_draws += 1;
    }
    while budget_draws > 0 && budget_draws as f64 * rho_init > rho {
        budget_draws -= 1;
    }
    let nf = s.n() as f64;
    let (q_lo, q_hi) = (cfg.q_l * nf, cfg.q_u * nf);
    let target = q * nf;
    let mut all = prev.to_vec();
    let (mut lower, mut upper) = (cfg.base.range.lower(), cfg.base.range.upper());
    let mut used = 0u64;
    while upper - lower > cfg.base.range.theta() {
        let x = 0.5 * (lower + upper);
        let mean = match all.iter().find(|m| m.x == x) {
            Some(m) => m.noisy_rank,
            None => {
                if used >= budget_draws {
                    break;
                }
                let rank = s.rank(x) as f64;
                let (mut sum, mut k) = (0.0, 0u32);
                while k < 10 && used < budget_draws {
                    sum += sample_gaussian(rng, rank, sd);
                    k += 1;
                    used += 1;
                    ledger.charge("binary_search", rho_init);
                    let mean = sum / k as f64;
                    let radius = (draw_var / k as f64).sqrt() * normal_upper_quantile(k as f64 * beta_init);
                    let clear = |c: f64| mean - radius > c || mean + radius < c;
                    if clear(q_lo) && clear(q_hi) {
                        break;
                    }
                }
                let mean = sum / k as f64;
                all.push(Measurement { x, noisy_rank: mean, variance: draw_var / k as f64, draws: k });
                mean
            }
        };
        if mean < target {
            lower = x;
        } else {
            upper = x;
        }
    }
    all
}

/// Endpoints from measurements under a union bound over all of them:
/// with R_t = √var_t·Φ⁻¹(1 − β₂/(2T)), lower = max{x_t : ns_t + R_t < k_low}
/// and upper = min{x_t : ns_t − R_t > k_up}, defaulting to the range ends.
pub fn post_process_union(ms: &[Measurement], k_low: f64, k_up: f64, beta2: f64, range: &RangeSpec) -> Interval {
    let z = if ms.is_empty() { 0.0 } else { normal_upper_quantile(beta2 / (2.0 * ms.len() as f64)) };
    let radius = |m: &Measurement| m.variance.sqrt() * z;
    let lower = ms
        .iter()
        .filter(|m| m.noisy_rank + radius(m) < k_low)
        .map(|m| m.x)
        .fold(range.lower(), f64::max);
    let upper = ms
        .iter()
        .filter(|m| m.noisy_rank - radius(m) > k_up)
        .map(|m| m.x)
        .fold(range.upper(), f64::min);
    Interval::hull(lower, upper)
}

/// NoisyBinSearch interval: one search per endpoint at ρ/2 each, the second
/// reusing the first's measurements, then union-bound post-processing.
pub fn noisy_binsearch_ci<R: RngCore + ?Sized>(
    s: &Sample,
    rho: f64,
    cfg: &BinSearchConfig,
    rng: &mut R,
    ledger: &mut Ledger,
) -> Result<(Interval, Vec<Measurement>)> {
    let sc = SearchConfig::new(cfg, s.n(), rho)?;
    let lower = get_noisy_counts(s, rho / 2.0, sc.q_l, &sc, &[], rng, ledger);
    let all = get_noisy_counts(s, rho / 2.0, sc.q_u, &sc, &lower, rng, ledger);
    let i = post_process_union(&all, sc.targets.k_low as f64, sc.targets.k_up as f64, sc.beta2, &cfg.range);
    Ok((i, all))
}
