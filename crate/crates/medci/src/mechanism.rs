//! Uniform front end over the interval mechanisms.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::binsearch::{noisy_binsearch_ci, BinSearchConfig, Measurement};
use crate::cdf_tree::{cdf_post_process_ci, CdfConfig, NoisyCdf};
use crate::composite::{binsearch_cdf_ci, HybridConfig};
use crate::error::{invalid, Result};
use crate::exp_mech::{compute_targets, widened_exp_mech, ExpMechConfig};
use crate::order_stats::{continuity_transform, nonprivate_ci, widen, ContinuityConfig, Interval, RangeSpec, Sample};
use crate::privacy::{Budget, BudgetKind, Ledger};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    NonPrivate,
    ExpMech,
    ExpMechUnion,
    Cdf,
    CdfUnion,
    BinSearch,
    BinSearchCdf,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 7] = [
        MechanismKind::NonPrivate,
        MechanismKind::ExpMech,
        MechanismKind::ExpMechUnion,
        MechanismKind::Cdf,
        MechanismKind::CdfUnion,
        MechanismKind::BinSearch,
        MechanismKind::BinSearchCdf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MechanismKind::NonPrivate => "nonprivate",
            MechanismKind::ExpMech => "exp_mech",
            MechanismKind::ExpMechUnion => "exp_mech_union",
            MechanismKind::Cdf => "cdf",
            MechanismKind::CdfUnion => "cdf_union",
            MechanismKind::BinSearch => "binsearch",
            MechanismKind::BinSearchCdf => "binsearch_cdf",
        }
    }

    /// Whether the mechanism accepts a pure-DP budget.
    pub fn accepts(&self, kind: BudgetKind) -> bool {
        match self {
            MechanismKind::NonPrivate | MechanismKind::ExpMech | MechanismKind::ExpMechUnion => true,
            _ => kind == BudgetKind::Zcdp,
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| invalid(format!("unknown mechanism '{s}'")))
    }
}

/// Hyperparameters shared by the mechanisms. Unset split parameters take the
/// per-mechanism defaults listed on the accessors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha: f64,
    pub range: RangeSpec,
    pub gamma: Option<f64>,
    pub r1: Option<f64>,
    pub beta2: Option<f64>,
}

impl Hyperparams {
    pub fn new(alpha: f64, range: RangeSpec) -> Self {
        Hyperparams { alpha, range, gamma: None, r1: None, beta2: None }
    }

    /// γ: 1/4 for the hybrid, 1/2 elsewhere.
    pub fn gamma_for(&self, kind: MechanismKind) -> f64 {
        self.gamma.unwrap_or(if kind == MechanismKind::BinSearchCdf { 0.25 } else { 0.5 })
    }

    /// r₁: 1/4.
    pub fn r1(&self) -> f64 {
        self.r1.unwrap_or(0.25)
    }

    /// β₂ for the union ExpMech: α/2.
    pub fn beta2(&self) -> f64 {
        self.beta2.unwrap_or(self.alpha / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Guarantee {
    /// (1 − α) coverage of the median for continuous data.
    Exact,
    /// Contains, with probability 1 − α, a point whose population CDF lies in [½ − β, ½ + β].
    BetaGood { beta: f64, a: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SideInfo {
    None,
    Cdf(NoisyCdf),
    Measurements(Vec<Measurement>),
    Hybrid { measurements: Vec<Measurement>, cdf: Option<NoisyCdf> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Release {
    pub interval: Interval,
    pub side: SideInfo,
    pub ledger: Ledger,
    pub guarantee: Guarantee,
}

impl Release {
    pub fn point(&self) -> f64 {
        self.interval.midpoint()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub params: Hyperparams,
    pub continuity: Option<ContinuityConfig>,
}

impl Mechanism {
    pub fn new(kind: MechanismKind, params: Hyperparams) -> Self {
        Mechanism { kind, params, continuity: None }
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        let range = self.params.range.with_theta(theta)?;
        Ok(Mechanism { params: Hyperparams { range, ..self.params }, ..*self })
    }

    pub fn range(&self) -> &RangeSpec {
        &self.params.range
    }

    pub fn run<R: RngCore + ?Sized>(&self, s: &Sample, budget: Budget, rng: &mut R) -> Result<Release> {
        if !self.kind.accepts(budget.kind()) {
            return Err(crate::Error::InvalidBudget(format!("{} needs a zCDP budget (rho)", self.kind)));
        }
        match self.continuity {
            None => self.run_inner(s, budget, rng),
            Some(c) => {
                let smoothed = continuity_transform(s, &c, rng);
                let mut r = self.run_inner(&smoothed, budget, rng)?;
                r.interval = widen(&r.interval, &c);
                r.guarantee = Guarantee::BetaGood { beta: c.beta(), a: c.a() };
                Ok(r)
            }
        }
    }

    fn run_inner<R: RngCore + ?Sized>(&self, s: &Sample, budget: Budget, rng: &mut R) -> Result<Release> {
        let p = &self.params;
        let mut ledger = Ledger::new(budget.kind());
        let (interval, side) = match self.kind {
            MechanismKind::NonPrivate => (nonprivate_ci(s, p.alpha)?, SideInfo::None),
            MechanismKind::ExpMech | MechanismKind::ExpMechUnion => {
                let eps = budget.as_epsilon();
                let cfg = if self.kind == MechanismKind::ExpMech {
                    ExpMechConfig::tight(eps, p.range, p.alpha)?
                } else {
                    ExpMechConfig::union(eps, p.range, p.alpha, p.beta2())?
                };
                let t = compute_targets(s.n(), &cfg)?;
                let theta = p.range.theta();
                // each endpoint is ε/2-DP; in zCDP terms the pair is charged ε²/2
                let share = budget.value() / 2.0;
                let a = widened_exp_mech(s, eps / 2.0, t.k_l, &p.range, rng)?;
                ledger.charge("exp_mech_lower", share);
                let b = widened_exp_mech(s, eps / 2.0, t.k_u, &p.range, rng)?;
                ledger.charge("exp_mech_upper", budget.value() - share);
                (Interval::hull(a - theta, b + theta), SideInfo::None)
            }
            MechanismKind::Cdf | MechanismKind::CdfUnion => {
                let cfg = CdfConfig {
                    alpha: p.alpha,
                    range: p.range,
                    union: self.kind == MechanismKind::CdfUnion,
                    gamma: p.gamma_for(self.kind),
                };
                let (i, cdf) = cdf_post_process_ci(s, budget.require_zcdp()?, &cfg, rng, &mut ledger)?;
                (i, SideInfo::Cdf(cdf))
            }
            MechanismKind::BinSearch => {
                let cfg = BinSearchConfig::standalone(p.alpha, p.range, p.gamma_for(self.kind));
                let (i, ms) = noisy_binsearch_ci(s, budget.require_zcdp()?, &cfg, rng, &mut ledger)?;
                (i, SideInfo::Measurements(ms))
            }
            MechanismKind::BinSearchCdf => {
                let cfg = HybridConfig { alpha: p.alpha, range: p.range, gamma: p.gamma_for(self.kind), r1: p.r1() };
                let out = binsearch_cdf_ci(s, budget.require_zcdp()?, &cfg, rng, &mut ledger)?;
                (out.interval, SideInfo::Hybrid { measurements: out.measurements, cdf: out.cdf })
            }
        };
        Ok(Release { interval, side, ledger, guarantee: Guarantee::Exact })
    }
}
