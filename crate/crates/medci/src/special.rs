//! Normal distribution helpers and an accurate Binomial(n, 1/2) table.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{LN_2, SQRT_2};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

/// 1 − Φ(z), accurate in the upper tail.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// Φ⁻¹(p) for p in (0,1).
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    -SQRT_2 * erfc_inv(2.0 * p)
}

/// Φ⁻¹(1 − q), computed without forming 1 − q.
pub fn normal_upper_quantile(q: f64) -> f64 {
    debug_assert!(q > 0.0 && q < 1.0);
    SQRT_2 * erfc_inv(2.0 * q)
}

// ln n! − ln(√(2πn)(n/e)^n)
fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let mut lf = 0.0;
        let mut k = 2.0;
        while k <= n {
            lf += f64::ln(k);
            k += 1.0;
        }
        return lf - (n + 0.5) * n.ln() + n - 0.5 * LN_2PI;
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

// x ln(x/np) + np − x, without cancellation near x = np.
fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        let mut j = 1.0;
        loop {
            ej *= v;
            let s1 = s + ej / (2.0 * j + 1.0);
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1.0;
        }
    }
    x * (x / np).ln() + np - x
}

/// ln Pr(Bin(n, 1/2) = k), via the saddle-point expansion.
pub fn binom_half_ln_pmf(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let nf = n as f64;
    if k == 0 || k == n {
        return -nf * LN_2;
    }
    let x = k as f64;
    let half = nf / 2.0;
    let lc = stirlerr(nf) - stirlerr(x) - stirlerr(nf - x) - bd0(x, half) - bd0(nf - x, half);
    let lf = LN_2PI + x.ln() + (-x / nf).ln_1p();
    lc - 0.5 * lf
}

// ln Σ_{j≤m} pmf(j) for m strictly below the mode, summed from m downward.
fn ln_lower_tail(n: u64, m: u64) -> f64 {
    let top = binom_half_ln_pmf(n, m);
    let mut s = 0.0;
    let mut j = m as i64;
    while j >= 0 {
        let t = (binom_half_ln_pmf(n, j as u64) - top).exp();
        s += t;
        if t < 1e-18 * s {
            break;
        }
        j -= 1;
    }
    top + s.ln()
}

/// Pr(Bin(n, 1/2) ≤ m), summed in log space from the nearer tail.
pub fn binom_half_cdf(n: u64, m: i64) -> f64 {
    if m < 0 {
        return 0.0;
    }
    let m = m as u64;
    if m >= n {
        return 1.0;
    }
    if 2 * m + 1 < n {
        ln_lower_tail(n, m).exp()
    } else if 2 * m + 1 == n {
        0.5
    } else {
        -(ln_lower_tail(n, n - 1 - m).exp_m1())
    }
}

/// Cached pmf and cdf of Bin(n, 1/2) for repeated queries.
#[derive(Debug, Clone)]
pub struct BinomialHalf {
    n: u64,
    pmf: Vec<f64>,
    lower: Vec<f64>,
}

impl BinomialHalf {
    pub fn new(n: u64) -> Self {
        let pmf: Vec<f64> = (0..=n).map(|k| binom_half_ln_pmf(n, k).exp()).collect();
        let half = (n as usize + 1) / 2;
        let mut lower = Vec::with_capacity(half);
        let mut acc = 0.0;
        for p in pmf.iter().take(half) {
            acc += p;
            lower.push(acc);
        }
        BinomialHalf { n, pmf, lower }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn pmf(&self, k: i64) -> f64 {
        if k < 0 || k as u64 > self.n {
            0.0
        } else {
            self.pmf[k as usize]
        }
    }

    pub fn pmf_slice(&self) -> &[f64] {
        &self.pmf
    }

    pub fn cdf(&self, m: i64) -> f64 {
        if m < 0 {
            return 0.0;
        }
        let m = m as u64;
        if m >= self.n {
            return 1.0;
        }
        if 2 * m + 1 < self.n {
            self.lower[m as usize]
        } else if 2 * m + 1 == self.n {
            0.5
        } else {
            1.0 - self.lower[(self.n - 1 - m) as usize]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cdf_values() {
        assert!((binom_half_cdf(5, 2) - 0.5).abs() < 1e-15);
        assert!((binom_half_cdf(5, 0) - 1.0 / 32.0).abs() < 1e-16);
        assert!((binom_half_cdf(5, 1) - 6.0 / 32.0).abs() < 1e-16);
        assert_eq!(binom_half_cdf(17, 17), 1.0);
        assert_eq!(binom_half_cdf(17, -1), 0.0);
    }

    #[test]
    fn large_n_tails() {
        // high-precision summation, mpmath at 40 digits
        let fixtures = [
            (499_000, 0.022_804_149_932_691_043),
            (498_500, 0.001_354_327_653_029_878_4),
            (497_000, 9.925_748_819_615_104e-10),
            (495_000, 7.690_777_521_953_676e-24),
        ];
        for (m, want) in fixtures {
            let got = binom_half_cdf(1_000_000, m);
            assert!(((got - want) / want).abs() < 1e-10, "m={m}: {got} vs {want}");
        }
    }

    #[test]
    fn table_matches_direct() {
        for n in [1u64, 2, 7, 40, 1001] {
            let t = BinomialHalf::new(n);
            let total: f64 = t.pmf_slice().iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            for m in -1..=(n as i64) {
                let d = binom_half_cdf(n, m);
                assert!((t.cdf(m) - d).abs() < 1e-13, "n={n} m={m}");
            }
        }
    }

    #[test]
    fn quantiles() {
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((normal_upper_quantile(0.05) - 1.644_853_626_951_472_2).abs() < 1e-12);
        assert!((normal_upper_quantile(1e-12) - 7.034_483_825_301_132).abs() < 1e-9);
        assert!((normal_cdf(1.0) + normal_sf(1.0) - 1.0).abs() < 1e-15);
    }
}
