//! Noisy dyadic histogram tree, variance-optimal post-processing, CDF
//! extraction with exact per-point variances, and the CDFPostProcess interval.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::binsearch::{post_process_union, Measurement};
use crate::error::{invalid, Error, Result};
use crate::order_stats::{nonprivate_ci_ranks, Interval, RangeSpec, Sample};
use crate::privacy::{sample_gaussian, Ledger};
use crate::special::{normal_sf, BinomialHalf};

pub const MAX_DEPTH: u32 = 30;

/// Depth m = ⌈log₂(|R|/θ)⌉, at least 1. Leaves have width exactly θ, so the
/// tree covers [r_l, r_l + 2^m θ] ⊇ R.
pub fn tree_depth(r: &RangeSpec) -> Result<u32> {
    let theta = r.theta();
    if !(theta > 0.0) {
        return Err(invalid("the tree mechanism needs θ > 0"));
    }
    let mut m = 1u32;
    while (2f64.powi(m as i32)) * theta < r.width() * (1.0 - 1e-12) {
        m += 1;
        if m > MAX_DEPTH {
            return Err(invalid(format!("|R|/θ = {} needs more than {MAX_DEPTH} levels", r.width() / theta)));
        }
    }
    Ok(m)
}

/// Heap-indexed tree: node 1 is the root, level j holds nodes 2^j..2^(j+1).
#[derive(Debug, Clone, PartialEq)]
pub struct DpTree {
    depth: u32,
    lower: f64,
    theta: f64,
    n: usize,
    nodes: Vec<f64>,
    /// Per-node variance; zero at the root.
    variances: Vec<f64>,
}

impl DpTree {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn root(&self) -> f64 {
        self.nodes[1]
    }

    pub fn level(&self, j: u32) -> &[f64] {
        &self.nodes[1 << j..2 << j]
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Raw per-node noise variance 2m/ρ (variance of a level-1 node).
    pub fn node_variance(&self) -> f64 {
        self.variances[2]
    }

    /// Grid r_l + iθ for i = 0..=2^m.
    pub fn grid(&self) -> Vec<f64> {
        (0..=(1usize << self.depth)).map(|i| grid_point(self.lower, self.theta, i)).collect()
    }
}

fn grid_point(lower: f64, theta: f64, i: usize) -> f64 {
    lower + i as f64 * theta
}

/// Exact dyadic counts (no noise) of the clipped data. Bins are (b_i, b_{i+1}]
/// except that the first bin also holds r_l, so prefix counts are ranks.
pub fn exact_tree(s: &Sample, r: &RangeSpec, depth: u32) -> DpTree {
    let leaves = 1usize << depth;
    let (lower, theta) = (r.lower(), r.theta());
    let mut nodes = vec![0.0; 2 * leaves];
    for v in s.clip(r).values() {
        let mut i = (((v - lower) / theta).ceil() as isize - 1).clamp(0, leaves as isize - 1) as usize;
        while i > 0 && *v <= grid_point(lower, theta, i) {
            i -= 1;
        }
        while i + 1 < leaves && *v > grid_point(lower, theta, i + 1) {
            i += 1;
        }
        nodes[leaves + i] += 1.0;
    }
    for i in (1..leaves).rev() {
        nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
    }
    DpTree { depth, lower, theta, n: s.n(), nodes, variances: vec![0.0; 2 * leaves] }
}

/// Noisy tree: every bin on levels 1..=m gets N(0, 2m/ρ); the root is n.
pub fn dp_tree<R: RngCore + ?Sized>(s: &Sample, rho: f64, r: &RangeSpec, rng: &mut R) -> Result<DpTree> {
    if !(rho > 0.0) {
        return Err(invalid(format!("rho must be positive, got {rho}")));
    }
    let depth = tree_depth(r)?;
    let mut t = exact_tree(s, r, depth);
    let var = 2.0 * depth as f64 / rho;
    let sd = var.sqrt();
    for i in 2..t.nodes.len() {
        t.nodes[i] = sample_gaussian(rng, t.nodes[i], sd);
        t.variances[i] = var;
    }
    t.nodes[1] = s.n() as f64;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelWeight {
    pub level: u32,
    /// Weight of a node's own measurement against its children's subtree estimate.
    pub w_minus: f64,
    /// Weight of a node's own measurement against everything outside its subtree.
    pub w_plus: f64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelWeights {
    pub levels: Vec<LevelWeight>,
}

impl LevelWeights {
    pub fn at(&self, level: u32) -> &LevelWeight {
        &self.levels[level as usize - 1]
    }
}

/// Per-level weights for levels 1..=m. Bottom-up from w⁻ = 1 at the leaves,
/// w⁻ = 2w⁻_c/(2w⁻_c + 1); top-down w⁺ = 1/(1 + (w⁺_parent + w⁻_sibling)⁻¹)
/// with the exactly known root contributing w⁺ = 0.
pub fn honaker_weights(m: u32) -> LevelWeights {
    assert!(m >= 1);
    let mut wm = vec![0.0; m as usize + 1];
    wm[m as usize] = 1.0;
    for j in (1..m as usize).rev() {
        wm[j] = 2.0 * wm[j + 1] / (2.0 * wm[j + 1] + 1.0);
    }
    let mut wp = vec![0.0; m as usize + 1];
    for j in 1..=m as usize {
        wp[j] = 1.0 / (1.0 + 1.0 / (wp[j - 1] + wm[j]));
    }
    LevelWeights {
        levels: (1..=m as usize)
            .map(|j| LevelWeight { level: j as u32, w_minus: wm[j], w_plus: wp[j], w: wp[j] })
            .collect(),
    }
}

/// Best linear unbiased re-estimate of every node under the consistency
/// constraints (parent = sum of children, root = n), in two passes.
///
/// Up: z_i blends the node's measurement with its children's z with weight w⁻.
/// Down: the node's measurement is blended with t⁺_parent − z_sibling (the
/// estimate from outside its subtree) with weight w⁺, giving t⁺_i. Finally an
/// internal node combines t⁺_i with its children's z-sum by inverse variance.
pub fn optimize_tree(t: &DpTree) -> DpTree {
    let m = t.depth;
    let w = honaker_weights(m);
    let leaves = 1usize << m;
    let y = &t.nodes;
    let s = t.node_variance();
    let mut z = y.clone();
    for j in (1..m).rev() {
        let wm = w.at(j).w_minus;
        for i in (1 << j)..(2 << j) {
            z[i] = wm * y[i] + (1.0 - wm) * (z[2 * i] + z[2 * i + 1]);
        }
    }
    let mut plus = vec![0.0; 2 * leaves];
    plus[1] = t.nodes[1];
    for j in 1..=m {
        let wp = w.at(j).w_plus;
        for i in (1 << j)..(2 << j) {
            let above = plus[i / 2] - z[i ^ 1];
            plus[i] = wp * y[i] + (1.0 - wp) * above;
        }
    }
    let mut out = vec![0.0; 2 * leaves];
    let mut var = vec![0.0; 2 * leaves];
    out[1] = t.nodes[1];
    for j in 1..=m {
        let wp = w.at(j).w_plus;
        for i in (1 << j)..(2 << j) {
            if j == m {
                out[i] = plus[i];
                var[i] = wp * s;
            } else {
                // children sum has variance 2 w⁻_{j+1} s; t⁺ has variance w⁺ s
                let vc = 2.0 * w.at(j + 1).w_minus;
                let below = z[2 * i] + z[2 * i + 1];
                out[i] = (plus[i] / wp + below / vc) / (1.0 / wp + 1.0 / vc);
                var[i] = s / (1.0 / wp + 1.0 / vc);
            }
        }
    }
    DpTree { nodes: out, variances: var, ..t.clone() }
}

/// Linear coefficient of raw node `i` on every optimized node (heap order).
pub fn node_effect(i: usize, m: u32) -> Vec<f64> {
    let leaves = 1usize << m;
    assert!(i >= 2 && i < 2 * leaves, "node {i} is not a noisy node of a depth-{m} tree");
    let mut nodes = vec![0.0; 2 * leaves];
    nodes[i] = 1.0;
    let mut variances = vec![1.0; 2 * leaves];
    variances[1] = 0.0;
    let impulse = DpTree { depth: m, lower: 0.0, theta: 1.0, n: 0, nodes, variances };
    optimize_tree(&impulse).nodes
}

fn unit_variances(m: u32) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&m) {
        return v.clone();
    }
    let v = Arc::new(compute_unit_variances(m));
    cache.lock().unwrap().insert(m, v.clone());
    v
}

// Σ_j (coefficient of raw node j on the prefix count at grid index i)² for
// unit raw variance. Impulse responses are computed once per level: the tree
// automorphism swapping children along the path to node (ℓ, p) maps leaf L to
// L xor (p << (m − ℓ)).
fn compute_unit_variances(m: u32) -> Vec<f64> {
    let leaves = 1usize << m;
    let mut acc = vec![0.0; leaves + 1];
    let mut prefix = vec![0.0; leaves + 1];
    for level in 1..=m {
        let effect = node_effect(1 << level, m);
        let leaf_effect = &effect[leaves..];
        let shift = m - level;
        for p in 0..(1usize << level) {
            let mask = p << shift;
            let mut run = 0.0;
            for (l, slot) in prefix.iter_mut().enumerate().skip(1) {
                run += leaf_effect[(l - 1) ^ mask];
                *slot = run;
            }
            for (a, q) in acc.iter_mut().zip(&prefix) {
                *a += q * q;
            }
        }
    }
    acc[0] = 0.0;
    acc[leaves] = 0.0;
    acc
}

/// Variance of the optimized prefix count at every grid index 0..=2^m, for a
/// raw per-node variance `sigma2`.
pub fn get_variances(m: u32, sigma2: f64) -> Vec<f64> {
    unit_variances(m).iter().map(|v| v * sigma2).collect()
}

/// Grid indices of the points, or an error if any point is off the leaf edges.
pub fn grid_indices(t: &DpTree, grid: &[f64]) -> Result<Vec<usize>> {
    let leaves = 1usize << t.depth;
    grid.iter()
        .map(|x| {
            let f = (x - t.lower) / t.theta;
            let i = f.round();
            if !(0.0..=leaves as f64).contains(&i) || (f - i).abs() > 1e-9 * (1.0 + f.abs()) {
                return Err(Error::UnalignedGrid(*x));
            }
            Ok(i as usize)
        })
        .collect()
}

/// Noisy CDF fraction at each grid point: the sum of the minimal set of
/// left-subtree nodes covering the prefix, divided by n.
pub fn tree_to_cdf(n: usize, t: &DpTree, grid: &[f64]) -> Result<Vec<f64>> {
    let m = t.depth;
    let leaves = 1usize << m;
    let idx = grid_indices(t, grid)?;
    Ok(idx
        .into_iter()
        .map(|i| {
            if i == leaves {
                return t.root() / n as f64;
            }
            let mut count = 0.0;
            for level in 1..=m {
                let pos = i >> (m - level);
                if pos & 1 == 1 {
                    count += t.nodes[(1 << level) + pos - 1];
                }
            }
            count / n as f64
        })
        .collect())
}

/// Released noisy CDF: grid point, noisy fraction, marginal variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyCdf {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub variances: Vec<f64>,
}

impl NoisyCdf {
    /// Values clamped to [0, 1] for display only.
    pub fn clamped_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.clamp(0.0, 1.0)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["x", "value", "variance"])?;
        for ((x, v), s) in self.grid.iter().zip(&self.values).zip(&self.variances) {
            out.write_record([x.to_string(), v.to_string(), s.to_string()])?;
        }
        out.flush()
    }
}

/// Smallest a with Σ_m Pr(Bin(n,½) = m)·Pr(m/n + N(0, σ²) > a) ≤ α/2.
pub fn threshold(sigma: f64, n: usize, alpha: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, u64, u64), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (n, sigma.to_bits(), alpha.to_bits());
    if let Some(a) = cache.lock().unwrap().get(&key) {
        return *a;
    }
    let a = compute_threshold(&binomial(n), sigma, alpha);
    cache.lock().unwrap().insert(key, a);
    a
}

fn binomial(n: usize) -> Arc<BinomialHalf> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<BinomialHalf>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    cache.lock().unwrap().entry(n).or_insert_with(|| Arc::new(BinomialHalf::new(n as u64))).clone()
}

fn compute_threshold(bin: &BinomialHalf, sigma: f64, alpha: f64) -> f64 {
    let n = bin.n() as usize;
    let half = alpha / 2.0;
    if sigma == 0.0 {
        // Pr(Bin > k) ≤ α/2 first holds at k = k_up
        let k = (0..=n).find(|k| 1.0 - bin.cdf(*k as i64) <= half).unwrap_or(n);
        return k as f64 / n as f64;
    }
    let pmf = bin.pmf_slice();
    let lo_m = pmf.iter().position(|p| *p > 1e-20).unwrap_or(0);
    let hi_m = n - lo_m;
    let tail = |a: f64| -> f64 {
        (lo_m..=hi_m).map(|m| pmf[m] * normal_sf((a - m as f64 / n as f64) / sigma)).sum()
    };
    let (mut lo, mut hi) = (0.0, 1.0 + 40.0 * sigma);
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) <= half {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfConfig {
    pub alpha: f64,
    pub range: RangeSpec,
    pub union: bool,
    /// Share of α given to sampling error on the union path.
    pub gamma: f64,
}

impl CdfConfig {
    pub fn validated(self) -> Result<Self> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.union && !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid(format!("gamma must lie in (0,1), got {}", self.gamma)));
        }
        tree_depth(&self.range)?;
        Ok(self)
    }
}

/// Build, optimize and read off the noisy CDF with its per-point variances.
pub fn noisy_cdf<R: RngCore + ?Sized>(s: &Sample, rho: f64, r: &RangeSpec, rng: &mut R) -> Result<NoisyCdf> {
    let raw = dp_tree(s, rho, r, rng)?;
    let opt = optimize_tree(&raw);
    let grid = opt.grid();
    let values = tree_to_cdf(s.n(), &opt, &grid)?;
    let n2 = (s.n() as f64).powi(2);
    let variances = get_variances(opt.depth, raw.node_variance()).into_iter().map(|v| v / n2).collect();
    Ok(NoisyCdf { grid, values, variances })
}

/// CDFPostProcess interval and its noisy CDF.
pub fn cdf_post_process_ci<R: RngCore + ?Sized>(
    s: &Sample,
    rho: f64,
    cfg: &CdfConfig,
    rng: &mut R,
    ledger: &mut Ledger,
) -> Result<(Interval, NoisyCdf)> {
    let cfg = cfg.validated()?;
    let cdf = noisy_cdf(s, rho, &cfg.range, rng)?;
    ledger.charge("cdf_tree", rho);
    let interval = if cfg.union { union_endpoints(s.n(), &cdf, &cfg)? } else { tight_endpoints(s.n(), &cdf, &cfg) };
    Ok((interval, cdf))
}

fn tight_endpoints(n: usize, cdf: &NoisyCdf, cfg: &CdfConfig) -> Interval {
    let (r_l, r_u) = (cfg.range.lower(), cfg.range.upper());
    let upper_thr: Vec<f64> = cdf.variances.iter().map(|v| threshold(v.sqrt(), n, cfg.alpha)).collect();
    // upper: smallest x whose whole suffix clears the upper threshold
    let mut upper = None;
    for i in (0..cdf.grid.len()).rev() {
        if cdf.values[i] > upper_thr[i] {
            upper = Some(cdf.grid[i]);
        } else {
            break;
        }
    }
    let mut lower = None;
    for i in 0..cdf.grid.len() {
        if cdf.values[i] < 1.0 - upper_thr[i] {
            lower = Some(cdf.grid[i]);
        } else {
            break;
        }
    }
    let upper = upper.map_or(r_u, |u| u.min(r_u));
    let lower = lower.map_or(r_l, |l| l.max(r_l));
    Interval::hull(lower, upper)
}

fn union_endpoints(n: usize, cdf: &NoisyCdf, cfg: &CdfConfig) -> Result<Interval> {
    let beta1 = cfg.gamma * cfg.alpha;
    let beta2 = (cfg.alpha - beta1) / (1.0 - beta1 / 2.0);
    let targets = nonprivate_ci_ranks(n, beta1)?;
    let nf = n as f64;
    let ms: Vec<Measurement> = cdf
        .grid
        .iter()
        .zip(&cdf.values)
        .zip(&cdf.variances)
        .map(|((x, v), var)| Measurement { x: *x, noisy_rank: v * nf, variance: var * nf * nf, draws: 0 })
        .collect();
    let i = post_process_union(&ms, targets.k_low as f64, targets.k_up as f64, beta2, &cfg.range);
    Ok(Interval::hull(i.lower.max(cfg.range.lower()), i.upper.min(cfg.range.upper())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::{BudgetKind, RngStream};

    fn r(lo: f64, hi: f64, th: f64) -> RangeSpec {
        RangeSpec::new(lo, hi, th).unwrap()
    }

    #[test]
    fn depth() {
        assert_eq!(tree_depth(&r(-5.0, 15.0, 0.5)).unwrap(), 6);
        assert_eq!(tree_depth(&r(0.0, 8.0, 1.0)).unwrap(), 3);
        assert_eq!(tree_depth(&r(0.0, 1.0, 1.0)).unwrap(), 1);
        assert!(tree_depth(&r(0.0, 1.0, 1e-10)).is_err());
        assert!(tree_depth(&r(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn weight_ladder() {
        let w = honaker_weights(4);
        let minus: Vec<f64> = (1..=4).rev().map(|j| w.at(j).w_minus).collect();
        for (got, want) in minus.iter().zip([1.0, 2.0 / 3.0, 4.0 / 7.0, 8.0 / 15.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(honaker_weights(1).at(1).w_minus, 1.0);
        let deep = honaker_weights(30);
        assert!(deep.at(1).w_minus > 0.5 && deep.at(1).w_minus < 0.500_001);
        for lw in &deep.levels {
            assert_eq!(lw.w, lw.w_plus);
            assert!(lw.w_plus > 0.0 && lw.w_plus <= 1.0);
        }
    }

    #[test]
    fn two_leaf_effects() {
        // leaves y2, y3 with root n exact: t*_2 = (y2 + n − y3)/2
        let e = node_effect(2, 1);
        assert!((e[2] - 0.5).abs() < 1e-15 && (e[3] + 0.5).abs() < 1e-15);
        let e = node_effect(3, 1);
        assert!((e[2] + 0.5).abs() < 1e-15 && (e[3] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn optimized_tree_is_consistent() {
        let s = Sample::new((0..200).map(|i| (i as f64 * 0.37).sin() * 4.0 + 5.0).collect()).unwrap();
        let range = r(0.0, 10.0, 0.5);
        let raw = dp_tree(&s, 0.3, &range, &mut RngStream::new(5, 0)).unwrap();
        let opt = optimize_tree(&raw);
        assert_eq!(opt.root(), 200.0);
        for i in 1..(1 << opt.depth()) {
            let diff = opt.node(i) - opt.node(2 * i) - opt.node(2 * i + 1);
            assert!(diff.abs() < 1e-9, "node {i}: {diff}");
        }
        for (v, raw_v) in opt.variances().iter().zip(raw.variances()).skip(2) {
            assert!(*v <= *raw_v);
        }
    }

    #[test]
    fn noiseless_cdf_is_empirical() {
        let s = Sample::new(vec![0.3, 1.2, 1.2, 2.0, 3.7, 9.9, -4.0]).unwrap();
        let range = r(0.0, 10.0, 0.5);
        let t = optimize_tree(&dp_tree(&s, 1e300, &range, &mut RngStream::new(1, 0)).unwrap());
        let grid = t.grid();
        let vals = tree_to_cdf(s.n(), &t, &grid).unwrap();
        let clipped = s.clip(&range);
        for (x, v) in grid.iter().zip(&vals).skip(1) {
            assert!((v - clipped.rank(*x) as f64 / 7.0).abs() < 1e-12, "x = {x}");
        }
        assert_eq!(vals[0], 0.0);
        assert_eq!(*vals.last().unwrap(), 1.0);
        assert!(tree_to_cdf(7, &t, &[0.25]).is_err());
        for lvl in 1..=t.depth() {
            assert!((t.level(lvl).iter().sum::<f64>() - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn variances_beat_naive() {
        for m in 1..=7 {
            let v = get_variances(m, 1.0);
            for (i, vi) in v.iter().enumerate() {
                assert!(*vi <= i as f64 + 1e-12);
            }
            assert_eq!(v[0], 0.0);
        }
    }

    #[test]
    fn threshold_shape() {
        let ku = nonprivate_ci_ranks(1000, 0.05).unwrap().k_up;
        assert_eq!(threshold(0.0, 1000, 0.05), ku as f64 / 1000.0);
        let tiny = threshold(1e-7, 1000, 0.05);
        assert!((tiny - ku as f64 / 1000.0).abs() < 2e-3);
        let mut prev = 0.5;
        for s in [0.001, 0.01, 0.05, 0.2, 1.0] {
            let a = threshold(s, 1000, 0.05);
            assert!(a > prev, "{s}: {a}");
            prev = a;
        }
    }

    #[test]
    fn spends_exactly_rho() {
        let s = Sample::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let cfg = CdfConfig { alpha: 0.2, range: r(0.0, 11.0, 0.5), union: false, gamma: 0.5 };
        let mut ledger = Ledger::new(BudgetKind::Zcdp);
        let (i, cdf) = cdf_post_process_ci(&s, 0.75, &cfg, &mut RngStream::new(3, 3), &mut ledger).unwrap();
        assert_eq!(ledger.spent(), 0.75);
        assert!(i.lower <= i.upper);
        assert_eq!(cdf.grid.len(), cdf.values.len());
    }
}
