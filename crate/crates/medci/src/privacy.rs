//! Budget algebra, conversions and the seeded noise primitives.

use rand::distr::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetKind {
    PureDp,
    Zcdp,
}

impl std::fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BudgetKind::PureDp => write!(f, "pure_dp"),
            BudgetKind::Zcdp => write!(f, "zcdp"),
        }
    }
}

/// A privacy budget: ε for pure DP or ρ for zCDP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    kind: BudgetKind,
    value: f64,
}

impl Budget {
    pub fn new(kind: BudgetKind, value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::InvalidBudget(format!("{kind} value must be finite and >= 0, got {value}")));
        }
        Ok(Budget { kind, value })
    }

    pub fn pure_dp(epsilon: f64) -> Result<Self> {
        Budget::new(BudgetKind::PureDp, epsilon)
    }

    pub fn zcdp(rho: f64) -> Result<Self> {
        Budget::new(BudgetKind::Zcdp, rho)
    }

    pub fn kind(&self) -> BudgetKind {
        self.kind
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// ε for the exponential mechanism: ε itself, or the ε whose pure-DP
    /// guarantee converts to exactly ρ-zCDP.
    pub fn as_epsilon(&self) -> f64 {
        match self.kind {
            BudgetKind::PureDp => self.value,
            BudgetKind::Zcdp => zcdp_to_pure_dp_equivalent(self.value),
        }
    }

    /// ρ for a Gaussian-noise mechanism. Pure-DP budgets are rejected.
    pub fn require_zcdp(&self) -> Result<f64> {
        match self.kind {
            BudgetKind::Zcdp => Ok(self.value),
            BudgetKind::PureDp => Err(Error::InvalidBudget(
                "this mechanism is calibrated in zCDP; supply rho rather than epsilon".into(),
            )),
        }
    }
}

/// An ε-DP mechanism is ε²/2-zCDP.
pub fn pure_dp_to_zcdp(epsilon: f64) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidBudget(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(epsilon * epsilon / 2.0)
}

/// Inverse of [`pure_dp_to_zcdp`]: the ε whose zCDP image is ρ.
pub fn zcdp_to_pure_dp_equivalent(rho: f64) -> f64 {
    (2.0 * rho).sqrt()
}

/// ρ-zCDP implies (ρ + 2√(ρ ln(1/δ)), δ)-DP.
pub fn zcdp_to_approx_dp(rho: f64, delta: f64) -> Result<f64> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidBudget(format!("rho must be >= 0, got {rho}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidBudget(format!("delta must lie in (0,1), got {delta}")));
    }
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Additive composition of budgets of one kind. Parts are summed left to right.
pub fn compose(parts: &[Budget]) -> Result<Budget> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidBudget("cannot compose an empty list".into()))?;
    let mut total = 0.0;
    for p in parts {
        if p.kind != first.kind {
            return Err(Error::MixedBudgetKinds);
        }
        total += p.value;
    }
    Budget::new(first.kind, total)
}

/// Split a budget by fractions. The last part absorbs the rounding residue so
/// that `compose(split(b, f))` returns `b` bit for bit.
pub fn split(total: Budget, fractions: &[f64]) -> Result<Vec<Budget>> {
    if fractions.is_empty() {
        return Err(Error::InvalidBudget("no split fractions given".into()));
    }
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0)) {
        return Err(Error::InvalidBudget(format!("split fraction must be positive, got {f}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidBudget(format!("split fractions sum to {sum}, not 1")));
    }
    let mut parts = Vec::with_capacity(fractions.len());
    let mut acc = 0.0;
    for f in &fractions[..fractions.len() - 1] {
        let v = (total.value * f).min(total.value - acc).max(0.0);
        acc += v;
        parts.push(Budget { kind: total.kind, value: v });
    }
    parts.push(Budget { kind: total.kind, value: residue(acc, total.value) });
    Ok(parts)
}

// Find r >= 0 with acc + r == t exactly (left-to-right float addition).
fn residue(acc: f64, t: f64) -> f64 {
    let mut r = (t - acc).max(0.0);
    for _ in 0..64 {
        let s = acc + r;
        if s == t {
            return r;
        }
        r = if s < t { r.next_up() } else { r.next_down().max(0.0) };
    }
    r
}

/// σ of the Gaussian mechanism for a query of the given sensitivity under ρ-zCDP.
pub fn gaussian_noise_scale(rho: f64, sensitivity: f64) -> Result<f64> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::InvalidBudget(format!("rho must be positive and finite, got {rho}")));
    }
    if !(sensitivity > 0.0) {
        return Err(Error::InvalidParameter(format!("sensitivity must be positive, got {sensitivity}")));
    }
    Ok(sensitivity / (2.0 * rho).sqrt())
}

/// Running record of every charge made against a budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    kind: BudgetKind,
    charges: Vec<Charge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Charge {
    pub label: String,
    pub value: f64,
}

impl Ledger {
    pub fn new(kind: BudgetKind) -> Self {
        Ledger { kind, charges: Vec::new() }
    }

    pub fn kind(&self) -> BudgetKind {
        self.kind
    }

    pub fn charge(&mut self, label: &str, value: f64) {
        debug_assert!(value >= 0.0);
        match self.charges.last_mut() {
            Some(c) if c.label == label => c.value += value,
            _ => self.charges.push(Charge { label: label.to_string(), value }),
        }
    }

    pub fn absorb(&mut self, other: &Ledger) -> Result<()> {
        if other.kind != self.kind {
            return Err(Error::MixedBudgetKinds);
        }
        self.charges.extend(other.charges.iter().cloned());
        Ok(())
    }

    pub fn charges(&self) -> &[Charge] {
        &self.charges
    }

    pub fn spent(&self) -> f64 {
        self.charges.iter().map(|c| c.value).sum()
    }
}

/// Deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngStream { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent child stream; the result depends only on `(seed, stream, id)`.
    pub fn child(&self, id: u64) -> RngStream {
        RngStream::new(self.seed, splitmix64(self.stream ^ splitmix64(id.wrapping_add(0x632b_e59b_d9b4_e019))))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn sample_gaussian<R: RngCore + ?Sized>(rng: &mut R, mu: f64, sigma: f64) -> f64 {
    debug_assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return mu;
    }
    let z: f64 = StandardNormal.sample(rng);
    mu + sigma * z
}

/// Standard Gumbel draw, −ln(−ln U) with U uniform on the open unit interval.
pub fn sample_gumbel<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = Open01.sample(rng);
    -(-u.ln()).ln()
}

pub fn sample_uniform<R: RngCore + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a <= b);
    if a == b {
        return a;
    }
    let u: f64 = Open01.sample(rng);
    (a + (b - a) * u).clamp(a, b)
}
