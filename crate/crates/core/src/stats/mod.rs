//! Significance and stability statistics.
//!
//! * [`mcnemar`]: paired binary outcomes (per-model score changes).
//! * [`wilcoxon_signed_rank`]: distribution shift across models.
//! * [`kendall_tau_b`] and [`bootstrap_tau_ci`]: leaderboard agreement, with
//!   [`equivalence_verdicts`] applying the strict (> 0.9) and moderate
//!   (> 0.8) thresholds to the interval's lower bound.
//! * [`size_robustness`]: Pearson correlation of drop against log10 size.

mod bootstrap;
mod kendall;
mod mcnemar;
mod size;
mod wilcoxon;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_percentile, bootstrap_tau_ci, bootstrap_tau_ci_items, BootstrapInterval};
pub use kendall::kendall_tau_b;
pub use mcnemar::{mcnemar, PairedOutcomes};
pub use size::{size_robustness, ModelDrop, SizeRobustnessReport};
pub use wilcoxon::wilcoxon_signed_rank;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("input vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("all values tied; statistic undefined")]
    AllTied,
    #[error("all differences are zero; no shift is testable")]
    AllZero,
    #[error("non-finite input value")]
    NonFinite,
    #[error("{degenerate} of {total} bootstrap resamples were degenerate (limit 10%)")]
    TooManyDegenerate { degenerate: usize, total: usize },
    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: Method,
    pub n_effective: usize,
}

/// `*` p<.05, `**` p<.01, `***` p<.001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

pub const STRICT_THRESHOLD: f64 = 0.9;
pub const MODERATE_THRESHOLD: f64 = 0.8;

/// `(strict, moderate)` with strict inequalities on the CI lower bound.
pub fn equivalence_verdicts(ci_low: f64) -> (bool, bool) {
    (ci_low > STRICT_THRESHOLD, ci_low > MODERATE_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankStabilityReport {
    pub tau: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub strict_equivalent: bool,
    pub moderate_equivalent: bool,
    /// `None` when every model's score is unchanged.
    pub wilcoxon_p: Option<f64>,
    pub n_models: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityOptions {
    pub resamples: usize,
    pub seed: u64,
    pub level: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            resamples: 10_000,
            seed: 0,
            level: 0.95,
        }
    }
}

/// Compares an original and a perturbed leaderboard over the same models.
pub fn rank_stability(
    original: &[f64],
    perturbed: &[f64],
    opts: &StabilityOptions,
) -> Result<RankStabilityReport, StatsError> {
    if original.len() != perturbed.len() {
        return Err(StatsError::LengthMismatch(original.len(), perturbed.len()));
    }
    let tau = kendall_tau_b(original, perturbed)?;
    let pairs: Vec<(f64, f64)> = original.iter().copied().zip(perturbed.iter().copied()).collect();
    let ci = bootstrap_tau_ci(&pairs, opts.resamples, opts.seed, opts.level)?;
    let (strict, moderate) = equivalence_verdicts(ci.low);
    let diffs: Vec<f64> = original.iter().zip(perturbed).map(|(o, p)| o - p).collect();
    let wilcoxon_p = match wilcoxon_signed_rank(&diffs) {
        Ok(r) => Some(r.p_value),
        Err(StatsError::AllZero) => None,
        Err(e) => return Err(e),
    };
    Ok(RankStabilityReport {
        tau,
        ci_low: ci.low,
        ci_high: ci.high,
        strict_equivalent: strict,
        moderate_equivalent: moderate,
        wilcoxon_p,
        n_models: original.len(),
    })
}

pub(crate) fn check_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}
