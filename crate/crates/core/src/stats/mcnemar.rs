use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{Method, TestResult};

/// Largest discordant total for which the exact binomial test is used.
const EXACT_LIMIT: u64 = 25;

/// 2×2 table of per-item correctness on original × perturbed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedOutcomes {
    pub n11: u64,
    /// Correct on original, wrong on perturbed.
    pub n10: u64,
    /// Wrong on original, correct on perturbed.
    pub n01: u64,
    pub n00: u64,
}

impl PairedOutcomes {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut t = PairedOutcomes::default();
        for (orig, pert) in pairs {
            match (orig, pert) {
                (true, true) => t.n11 += 1,
                (true, false) => t.n10 += 1,
                (false, true) => t.n01 += 1,
                (false, false) => t.n00 += 1,
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    pub fn test(&self) -> TestResult {
        mcnemar(self.n10, self.n01)
    }
}

fn binomial(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// McNemar's test on discordant counts `b` and `c`.
///
/// Exact two-sided binomial (doubled tail, capped at 1) when `b + c <= 25`,
/// otherwise the continuity-corrected chi-square `(|b-c|-1)^2 / (b+c)`.
pub fn mcnemar(b: u64, c: u64) -> TestResult {
    let n = b + c;
    if n == 0 {
        return TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: Method::Exact,
            n_effective: 0,
        };
    }
    if n <= EXACT_LIMIT {
        let k = b.min(c);
        let tail: f64 = (0..=k).map(|i| binomial(n, i)).sum::<f64>() / 2f64.powi(n as i32);
        return TestResult {
            statistic: k as f64,
            p_value: (2.0 * tail).min(1.0),
            method: Method::Exact,
            n_effective: n as usize,
        };
    }
    let diff = (b as f64 - c as f64).abs() - 1.0;
    let stat = diff * diff / n as f64;
    let chi2 = ChiSquared::new(1.0).expect("df=1 is valid");
    TestResult {
        statistic: stat,
        p_value: chi2.sf(stat).clamp(0.0, 1.0),
        method: Method::Approximate,
        n_effective: n as usize,
    }
}
