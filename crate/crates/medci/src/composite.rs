//! BinSearch+CDF hybrid and the continuity wrapper.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::binsearch::{noisy_binsearch_ci, BinSearchConfig, Measurement};
use crate::cdf_tree::{cdf_post_process_ci, CdfConfig, NoisyCdf};
use crate::error::{invalid, Result};
use crate::mechanism::Mechanism;
use crate::order_stats::{ContinuityConfig, Interval, RangeSpec, Sample};
use crate::privacy::{split, Budget, BudgetKind, Ledger};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub alpha: f64,
    pub range: RangeSpec,
    /// Budget fraction of the search phase.
    pub gamma: f64,
    /// Coverage fraction of the search phase.
    pub r1: f64,
}

impl HybridConfig {
    pub fn new(alpha: f64, range: RangeSpec) -> Self {
        HybridConfig { alpha, range, gamma: 0.25, r1: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutput {
    pub interval: Interval,
    /// Search-phase range after snapping outward to the θ grid.
    pub narrowed: Interval,
    pub measurements: Vec<Measurement>,
    pub cdf: Option<NoisyCdf>,
}

/// Outward snap of [lo, hi] to r_l + jθ, kept inside R.
pub fn snap_outward(i: &Interval, r: &RangeSpec) -> Interval {
    let (r_l, theta) = (r.lower(), r.theta());
    let lo = r_l + ((i.lower - r_l) / theta + 1e-9).floor() * theta;
    let hi = r_l + ((i.upper - r_l) / theta - 1e-9).ceil() * theta;
    Interval::hull(lo.max(r_l), hi.min(r.upper()))
}

/// Phase 1 runs NoisyBinSearch with γρ at coverage 1 − r₁α to find a range;
/// phase 2 runs the tight tree mechanism inside it with (1 − γ)ρ at
/// coverage 1 − (1 − r₁)α. The ledger records each phase's allocation.
pub fn binsearch_cdf_ci<R: RngCore + ?Sized>(
    s: &Sample,
    rho: f64,
    cfg: &HybridConfig,
    rng: &mut R,
    ledger: &mut Ledger,
) -> Result<HybridOutput> {
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0 && cfg.r1 > 0.0 && cfg.r1 < 1.0) {
        return Err(invalid("hybrid needs gamma and r1 in (0,1)"));
    }
    let parts = split(Budget::zcdp(rho)?, &[cfg.gamma, 1.0 - cfg.gamma])?;
    let (rho1, rho2) = (parts[0].value(), parts[1].value());
    let search = BinSearchConfig { alpha: cfg.r1 * cfg.alpha, range: cfg.range, gamma: cfg.gamma, lb: 0.25, ub: 0.75 };
    let mut phase1 = Ledger::new(BudgetKind::Zcdp);
    let (found, measurements) = noisy_binsearch_ci(s, rho1, &search, rng, &mut phase1)?;
    ledger.charge("binary_search_phase", rho1);
    let narrowed = snap_outward(&found, &cfg.range);
    if narrowed.width() <= cfg.range.theta() {
        ledger.charge("cdf_phase", rho2);
        return Ok(HybridOutput { interval: narrowed, narrowed, measurements, cdf: None });
    }
    let inner = RangeSpec::new(narrowed.lower, narrowed.upper, cfg.range.theta())?;
    let tree = CdfConfig { alpha: (1.0 - cfg.r1) * cfg.alpha, range: inner, union: false, gamma: cfg.gamma };
    let mut phase2 = Ledger::new(BudgetKind::Zcdp);
    let (interval, cdf) = cdf_post_process_ci(s, rho2, &tree, rng, &mut phase2)?;
    ledger.charge("cdf_phase", rho2);
    Ok(HybridOutput { interval, narrowed, measurements, cdf: Some(cdf) })
}

/// The mechanism run on Gaussian-smoothed data, its interval widened by
/// a = Φ_σ⁻¹(1 − β). The release carries a β-good guarantee.
pub fn wrap_continuity(mechanism: Mechanism, cfg: ContinuityConfig) -> Mechanism {
    Mechanism { continuity: Some(cfg), ..mechanism }
}
