//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.

use medci::binsearch::{noisy_binsearch_ci, BinSearchConfig, SearchConfig};
use medci::cdf_tree::{dp_tree, exact_tree, get_variances, honaker_weights, optimize_tree, tree_depth, tree_to_cdf};
use medci::eval::{run_experiment, Distribution, ExperimentConfig, Report};
use medci::exp_mech::{compute_targets, gumbel_argmax, widened_exp_mech, ExpMechConfig};
use medci::order_stats::nonprivate_ci_ranks;
use medci::privacy::{compose, pure_dp_to_zcdp, split, zcdp_to_approx_dp};
use medci::*;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use rand_distr::LogNormal;

fn verdict(n: u32, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

fn lognormal_cfg(kind: MechanismKind, theta: f64, datasets: usize, trials: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        distribution: Distribution::Lognormal { mu: 1.5f64.ln(), sigma: 1.0 },
        n: 1000,
        num_datasets: datasets,
        trials_per_dataset: trials,
        mechanism: Mechanism::new(kind, Hyperparams::new(0.05, RangeSpec::new(-5.0, 15.0, theta).unwrap())),
        budget: Budget::zcdp(1.0).unwrap(),
        seed,
    }
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn criterion_01_exact_formulas() {
    let mut fails = Vec::new();
    for eps in [0.1, 0.5, 1.0, 2.0, 7.3] {
        if (pure_dp_to_zcdp(eps).unwrap() - eps * eps / 2.0).abs() > 1e-12 {
            fails.push(format!("eps^2/2 at {eps}"));
        }
    }
    for (rho, delta) in [(0.5, 1e-6), (0.1, 1e-9), (2.0, 1e-5)] {
        let want = rho + 2.0 * (rho * (1.0f64 / delta).ln()).sqrt();
        if (zcdp_to_approx_dp(rho, delta).unwrap() - want).abs() > 1e-12 {
            fails.push(format!("approx dp at ({rho}, {delta})"));
        }
    }
    let e = zcdp_to_approx_dp(0.5, 1e-6).unwrap();
    if (e - 5.756521769756932).abs() > 1e-12 {
        fails.push(format!("rho=0.5 delta=1e-6 gave {e}"));
    }
    for total in [Budget::zcdp(0.5).unwrap(), Budget::zcdp(1.0 / 3.0).unwrap(), Budget::pure_dp(0.7).unwrap()] {
        for fr in [vec![1.0 / 3.0; 3], vec![0.25, 0.75], vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 0.5]] {
            let parts = split(total, &fr).unwrap();
            let back = compose(&parts).unwrap();
            if back.value().to_bits() != total.value().to_bits() || back.kind() != total.kind() {
                fails.push(format!("split/compose of {total:?} by {fr:?}"));
            }
        }
    }
    let w = honaker_weights(4);
    let ladder: Vec<f64> = (1..=4).rev().map(|j| w.at(j).w_minus).collect();
    for (got, want) in ladder.iter().zip([1.0, 2.0 / 3.0, 4.0 / 7.0, 8.0 / 15.0]) {
        if (got - want).abs() > 1e-12 {
            fails.push(format!("w_minus {got} vs {want}"));
        }
    }
    verdict(1, fails.is_empty(), format!("conversions, split/compose, w_minus ladder {ladder:?} {fails:?}"));
}

/// u(x) = −min{|rank(a) − k| : |a − x| ≤ θ}, evaluated straight from the
/// definition for distinct data.
fn widened_utility(data: &[f64], k: usize, theta: f64, x: f64) -> f64 {
    let rank = |a: f64| data.iter().filter(|d| **d <= a).count();
    let mut reachable = vec![rank(x - theta)];
    reachable.extend(data.iter().filter(|d| **d > x - theta && **d <= x + theta).map(|d| rank(*d)));
    -(reachable.iter().map(|r| r.abs_diff(k)).min().unwrap() as f64)
}

#[test]
fn criterion_02_sampler_oracles() {
    let data = vec![1.0, 2.2, 2.5, 4.0, 4.4, 6.1, 7.3, 9.0];
    let (theta, eps) = (0.3, 1.5);
    let range = RangeSpec::new(0.0, 10.0, theta).unwrap();
    let s = Sample::new(data.clone()).unwrap();
    let mut cuts: Vec<f64> = data.iter().flat_map(|d| [d - theta, d + theta]).chain([0.0, 10.0]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let draws = 100_000;
    let mut worst: f64 = 0.0;
    for k in [1, 4, 5, 8] {
        // the density is constant between consecutive cuts
        let mass: Vec<f64> = cuts
            .windows(2)
            .map(|w| (w[1] - w[0]) * (eps * widened_utility(&data, k, theta, 0.5 * (w[0] + w[1])) / 2.0).exp())
            .collect();
        let z: f64 = mass.iter().sum();
        let exact: Vec<f64> = mass.iter().map(|m| m / z).collect();
        let mut counts = vec![0.0; exact.len()];
        let mut rng = RngStream::new(2024, k as u64);
        for _ in 0..draws {
            let x = widened_exp_mech(&s, eps, k, &range, &mut rng).unwrap();
            let j = cuts.partition_point(|c| *c <= x).clamp(1, cuts.len() - 1) - 1;
            counts[j] += 1.0;
        }
        let freq: Vec<f64> = counts.iter().map(|c| c / draws as f64).collect();
        worst = worst.max(tv(&exact, &freq));
    }
    let scores = [0.0, -1.0, 0.5, -3.0, 1.2, -0.2, f64::NEG_INFINITY, 0.9, -0.7];
    let weights: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
    let z: f64 = weights.iter().sum();
    let softmax: Vec<f64> = weights.iter().map(|w| w / z).collect();
    let mut rng = RngStream::new(7, 7);
    let direct = WeightedIndex::new(&weights).unwrap();
    let (mut gum, mut dir) = (vec![0.0; scores.len()], vec![0.0; scores.len()]);
    for _ in 0..draws {
        gum[gumbel_argmax(&scores, &mut rng).unwrap()] += 1.0 / draws as f64;
        dir[direct.sample(&mut rng)] += 1.0 / draws as f64;
    }
    let (tv_g, tv_d, tv_gd) = (tv(&gum, &softmax), tv(&dir, &softmax), tv(&gum, &dir));
    let ok = worst <= 0.02 && tv_g <= 0.02 && tv_gd <= 0.02 && gum[6] == 0.0;
    verdict(2, ok, format!("widened TV {worst:.4}, gumbel TV {tv_g:.4}, direct TV {tv_d:.4}, gumbel-vs-direct TV {tv_gd:.4}"));
}

/// Largest gap between order statistics within two ranks of k.
fn spacing(s: &Sample, k: usize) -> f64 {
    let lo = k.saturating_sub(2).max(1);
    let hi = (k + 2).min(s.n());
    (lo..hi).map(|i| s.order_stat(i + 1) - s.order_stat(i)).fold(0.0, f64::max)
}

#[test]
fn criterion_03_noiseless_limit() {
    let huge = Budget::zcdp(1e12).unwrap();
    let alpha = 0.05;
    let theta = 0.05;
    let range = RangeSpec::new(-5.0, 15.0, theta).unwrap();
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    let d = LogNormal::new(1.5f64.ln(), 1.0).unwrap();
    for ds in 0..20u64 {
        let mut rng = RngStream::new(3, ds);
        let s = Sample::new((0..1000).map(|_| d.sample(&mut rng)).collect()).unwrap();
        for kind in MechanismKind::ALL {
            let mut p = Hyperparams::new(alpha, range);
            if matches!(kind, MechanismKind::BinSearch) {
                p.gamma = Some(0.5);
            }
            let m = Mechanism::new(kind, p);
            let out = m.run(&s, huge, &mut rng).unwrap().interval;
            // reference order statistics and widening per mechanism
            let (refs, widen) = match kind {
                MechanismKind::ExpMech | MechanismKind::ExpMechUnion => {
                    let cfg = if kind == MechanismKind::ExpMech {
                        ExpMechConfig::tight(huge.as_epsilon(), range, alpha).unwrap()
                    } else {
                        ExpMechConfig::union(huge.as_epsilon(), range, alpha, alpha / 2.0).unwrap()
                    };
                    let t = compute_targets(1000, &cfg).unwrap();
                    // tight: k_L is the α rank and k_U its mirror n + 1 − k_L;
                    // union: ⌊k_low − t⌋ and ⌈k_up + t⌉ at level α − β₂ = α/2, t > 0
                    let want = if kind == MechanismKind::ExpMech {
                        let np = nonprivate_ci_ranks(1000, alpha).unwrap();
                        (np.k_low, 1001 - np.k_low)
                    } else {
                        let np = nonprivate_ci_ranks(1000, alpha / 2.0).unwrap();
                        (np.k_low - 1, np.k_up + 1)
                    };
                    if (t.k_l, t.k_u) != want {
                        fails.push(format!("{kind} limit targets {t:?} vs {want:?}"));
                    }
                    ((t.k_l, t.k_u), theta)
                }
                MechanismKind::BinSearch => {
                    let np = nonprivate_ci_ranks(1000, 0.5 * alpha).unwrap();
                    ((np.k_low, np.k_up), 0.0)
                }
                MechanismKind::BinSearchCdf => {
                    let np = nonprivate_ci_ranks(1000, 0.75 * alpha).unwrap();
                    ((np.k_low, np.k_up), 0.0)
                }
                MechanismKind::CdfUnion => {
                    let np = nonprivate_ci_ranks(1000, 0.5 * alpha).unwrap();
                    ((np.k_low, np.k_up), 0.0)
                }
                _ => {
                    let np = nonprivate_ci_ranks(1000, alpha).unwrap();
                    ((np.k_low, np.k_up), 0.0)
                }
            };
            let (lo_ref, hi_ref) = (s.order_stat(refs.0) - widen, s.order_stat(refs.1) + widen);
            let dl = (out.lower - lo_ref).abs() - spacing(&s, refs.0);
            let du = (out.upper - hi_ref).abs() - spacing(&s, refs.1);
            worst = worst.max(dl.max(du) / theta);
            if dl > theta + 1e-12 || du > theta + 1e-12 {
                fails.push(format!("{kind} ds {ds}: {out:?} vs [{lo_ref}, {hi_ref}]"));
            }
        }
    }
    let r = RangeSpec::new(-5.0, 15.0, 0.05).unwrap();
    let mut rng = RngStream::new(33, 0);
    let s = Sample::new((0..777).map(|_| d.sample(&mut rng)).collect()).unwrap();
    let t = exact_tree(&s, &r, tree_depth(&r).unwrap());
    let grid = t.grid();
    let cdf = tree_to_cdf(s.n(), &t, &grid).unwrap();
    let clipped = s.clip(&r);
    let exact_ok = grid.iter().zip(&cdf).all(|(x, c)| *c == clipped.rank(*x) as f64 / s.n() as f64);
    if !exact_ok {
        fails.push("tree_to_cdf differs from the empirical CDF".into());
    }
    verdict(
        3,
        fails.is_empty(),
        format!("20 datasets x 7 mechanisms, worst excess over local spacing {worst:.3} theta; zero-noise CDF exact: {exact_ok} {fails:?}"),
    );
}

#[test]
fn criterion_04_variance_propagation() {
    let mut fails = Vec::new();
    let mut worst: f64 = 0.0;
    let draws = 10_000;
    for m in [3u32, 5] {
        let leaves = 1usize << m;
        let r = RangeSpec::new(0.0, leaves as f64, 1.0).unwrap();
        let mut rng = RngStream::new(4, m as u64);
        let s = Sample::new((0..300).map(|_| rng.random::<f64>() * leaves as f64).collect()).unwrap();
        let rho = 0.7;
        let grid: Vec<f64> = (0..=leaves).map(|i| i as f64).collect();
        let (mut sum, mut sum2) = (vec![0.0; leaves + 1], vec![0.0; leaves + 1]);
        let mut node_var = 0.0;
        for _ in 0..draws {
            let raw = dp_tree(&s, rho, &r, &mut rng).unwrap();
            node_var = raw.node_variance();
            let c = tree_to_cdf(s.n(), &optimize_tree(&raw), &grid).unwrap();
            for (i, v) in c.iter().enumerate() {
                let count = v * s.n() as f64;
                sum[i] += count;
                sum2[i] += count * count;
            }
        }
        let predicted = get_variances(m, node_var);
        for i in 0..=leaves {
            let mean = sum[i] / draws as f64;
            let mc = (sum2[i] - draws as f64 * mean * mean) / (draws - 1) as f64;
            if predicted[i] == 0.0 {
                if mc > 1e-12 {
                    fails.push(format!("m={m} i={i}: zero predicted, mc {mc}"));
                }
                continue;
            }
            let rel = (mc - predicted[i]).abs() / predicted[i];
            worst = worst.max(rel);
            if rel > 0.05 {
                fails.push(format!("m={m} i={i}: predicted {} mc {mc}", predicted[i]));
            }
        }
    }
    verdict(4, fails.is_empty(), format!("worst relative error {worst:.4} over 10^4 draws {fails:?}"));
}

fn coverage_floor(alpha: f64, runs: usize) -> f64 {
    1.0 - alpha - 3.0 * (alpha * (1.0 - alpha) / runs as f64).sqrt()
}

#[test]
fn criterion_05_coverage() {
    let floor = coverage_floor(0.05, 5000);
    let mut lines = Vec::new();
    let mut ok = true;
    for (kind, theta) in [
        (MechanismKind::ExpMech, 0.05),
        (MechanismKind::Cdf, 0.5),
        (MechanismKind::BinSearch, 0.5),
        (MechanismKind::BinSearchCdf, 0.5),
    ] {
        let r = run_experiment(&lognormal_cfg(kind, theta, 1000, 5, 5)).unwrap();
        ok &= r.summary.coverage >= floor && r.summary.failures == 0;
        lines.push(format!("{kind} {:.4}", r.summary.coverage));
    }
    verdict(5, ok, format!("floor {floor:.4}: {}", lines.join(", ")));
}

#[test]
fn criterion_06_width() {
    let r = run_experiment(&lognormal_cfg(MechanismKind::ExpMech, 0.05, 1000, 5, 5)).unwrap();
    let q50 = r.summary.rel_width.q50;
    verdict(6, q50 <= 2.2, format!("ExpMech median relative width {q50:.3} (q05 {:.3}, q95 {:.3})", r.summary.rel_width.q05, r.summary.rel_width.q95));
}

fn median_width(kind: MechanismKind, theta: f64) -> f64 {
    run_experiment(&lognormal_cfg(kind, theta, 100, 5, 6)).unwrap().summary.rel_width.q50
}

#[test]
fn criterion_07_tight_vs_union() {
    let theta = 0.05;
    let (et, eu) = (median_width(MechanismKind::ExpMech, theta), median_width(MechanismKind::ExpMechUnion, theta));
    let (ct, cu) = (median_width(MechanismKind::Cdf, theta), median_width(MechanismKind::CdfUnion, theta));
    verdict(7, et <= eu && ct <= cu, format!("ExpMech tight {et:.3} vs union {eu:.3}; CDF tight {ct:.3} vs union {cu:.3}"));
}

/// Point mass at zero plus a lognormal body, topcoded, then jittered by N(0, 0.01).
fn income_population(size: usize, zero_share: f64, mu: f64, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed, 0);
    let body = LogNormal::new(mu, sigma).unwrap();
    (0..size)
        .map(|_| {
            let v: f64 = if rng.random::<f64>() < zero_share { 0.0 } else { body.sample(&mut rng).min(5001.0) };
            v + medci::privacy::sample_gaussian(&mut rng, 0.0, 0.1)
        })
        .collect()
}

#[test]
fn criterion_08_census_workflow() {
    let groups = [(120_000, 0.15, 6.6, 0.8), (60_000, 0.3, 6.2, 1.0), (90_000, 0.05, 7.0, 0.6)];
    let per_group = split(Budget::zcdp(0.5).unwrap(), &[1.0 / 3.0; 3]).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for (g, &(size, zero, mu, sigma)) in groups.iter().enumerate() {
        let cfg = ExperimentConfig {
            distribution: Distribution::empirical(income_population(size, zero, mu, sigma, 80 + g as u64), 0.01).unwrap(),
            n: 0,
            num_datasets: 200,
            trials_per_dataset: 5,
            mechanism: Mechanism::new(MechanismKind::ExpMech, Hyperparams::new(0.1, RangeSpec::new(0.0, 5001.0, 5.0).unwrap())),
            budget: per_group[g],
            seed: 8,
        };
        let r: Report = run_experiment(&cfg).unwrap();
        let min_width = r.records.iter().filter_map(|x| Some(x.upper? - x.lower?)).fold(f64::INFINITY, f64::min);
        ok &= r.summary.coverage >= 0.90 && r.summary.failures == 0 && min_width >= 5.0;
        lines.push(format!("group {g} n={} coverage {:.3} min width {min_width:.1}", r.summary.n, r.summary.coverage));
    }
    verdict(8, ok, lines.join("; "));
}

#[test]
fn criterion_09_binsearch_ledger() {
    let mut rng = RngStream::new(9, 0);
    let mut fails = 0;
    let mut max_ratio: f64 = 0.0;
    for run in 0..100 {
        let n = rng.random_range(50..3000);
        let rho = 10f64.powf(rng.random_range(-2.0..1.0));
        let alpha = rng.random_range(0.01..0.3);
        let gamma = rng.random_range(0.1..0.9);
        let theta = [0.01, 0.05, 0.2, 1.0][run % 4];
        let d = LogNormal::new(rng.random_range(-1.0..2.0), rng.random_range(0.2..2.0)).unwrap();
        let s = Sample::new((0..n).map(|_| d.sample(&mut rng)).collect()).unwrap();
        let cfg = BinSearchConfig::standalone(alpha, RangeSpec::new(-5.0, 50.0, theta).unwrap(), gamma);
        let mut ledger = Ledger::new(BudgetKind::Zcdp);
        let (_, ms) = noisy_binsearch_ci(&s, rho, &cfg, &mut rng, &mut ledger).unwrap();
        let sc = SearchConfig::new(&cfg, n, rho).unwrap();
        let rho_init = sc.rho_step / 10.0;
        let replay: f64 = ms.iter().map(|m| m.draws as f64 * rho_init).sum();
        let from_variance: f64 = ms.iter().map(|m| 1.0 / (2.0 * m.variance * m.draws as f64) * m.draws as f64).sum();
        let reported = ledger.spent();
        max_ratio = max_ratio.max(reported / rho);
        if (replay - reported).abs() > 1e-12 * rho || (from_variance - reported).abs() > 1e-9 * rho || reported > rho {
            fails += 1;
        }
    }
    verdict(9, fails == 0, format!("100 runs, {fails} mismatches, max spend/rho {max_ratio:.4}"));
}

#[test]
fn criterion_10_bias_trend() {
    let kinds = [MechanismKind::NonPrivate, MechanismKind::ExpMech, MechanismKind::Cdf, MechanismKind::BinSearchCdf];
    let mut table = Vec::new();
    for sigma in [2.0, 6.0, 10.0] {
        let row: Vec<f64> = kinds
            .iter()
            .map(|k| {
                let cfg = ExperimentConfig {
                    distribution: Distribution::Lognormal { mu: 0.0, sigma },
                    n: 1000,
                    num_datasets: 5000,
                    trials_per_dataset: 5,
                    mechanism: Mechanism::new(*k, Hyperparams::new(0.05, RangeSpec::new(-5.0, 15.0, 0.05).unwrap())),
                    budget: Budget::zcdp(1.0).unwrap(),
                    seed: 10,
                };
                run_experiment(&cfg).unwrap().summary.bias
            })
            .collect();
        table.push((sigma, row));
    }
    let np: Vec<f64> = table.iter().map(|(_, r)| r[0]).collect();
    let monotone = np.windows(2).all(|w| w[1] > w[0]);
    let within = table.iter().all(|(_, r)| r[1..].iter().all(|b| b.abs() <= 3.0 * r[0].abs()));
    let shown: Vec<String> = table
        .iter()
        .map(|(s, r)| format!("sigma {s}: np {:.4} exp {:.4} cdf {:.4} hybrid {:.4}", r[0], r[1], r[2], r[3]))
        .collect();
    verdict(10, monotone && within, shown.join("; "));
}
