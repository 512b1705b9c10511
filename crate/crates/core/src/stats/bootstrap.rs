use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kendall_tau_b, StatsError};

const MIN_RESAMPLES: usize = 1000;
const MAX_DEGENERATE_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub low: f64,
    pub high: f64,
    pub resamples: usize,
    pub degenerate: usize,
}

/// Linear-interpolated quantile of sorted data (numpy's default).
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap over `n_units` resampled with replacement.
///
/// Resample `r` draws from its own ChaCha stream `(seed, r)`, so the result
/// does not depend on how rayon schedules the work. `statistic` returns
/// `None` for degenerate resamples, which are skipped; more than 10%
/// degenerate is an error.
pub fn bootstrap_percentile<F>(
    n_units: usize,
    resamples: usize,
    seed: u64,
    level: f64,
    statistic: F,
) -> Result<BootstrapInterval, StatsError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if resamples < MIN_RESAMPLES {
        return Err(StatsError::InvalidArgument(format!(
            "need at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidArgument(format!("confidence level {level} not in (0, 1)")));
    }
    let values: Vec<Option<f64>> = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let idx: Vec<usize> = (0..n_units).map(|_| rng.gen_range(0..n_units)).collect();
            statistic(&idx)
        })
        .collect();
    let mut kept: Vec<f64> = values.into_iter().flatten().collect();
    let degenerate = resamples - kept.len();
    if degenerate as f64 > MAX_DEGENERATE_FRACTION * resamples as f64 {
        return Err(StatsError::TooManyDegenerate {
            degenerate,
            total: resamples,
        });
    }
    kept.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(BootstrapInterval {
        low: quantile(&kept, alpha),
        high: quantile(&kept, 1.0 - alpha),
        resamples,
        degenerate,
    })
}

/// CI for tau-b by resampling models (score pairs) with replacement.
pub fn bootstrap_tau_ci(
    pairs: &[(f64, f64)],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapInterval, StatsError> {
    if pairs.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: pairs.len(),
        });
    }
    bootstrap_percentile(pairs.len(), resamples, seed, level, |idx| {
        let xs: Vec<f64> = idx.iter().map(|&i| pairs[i].0).collect();
        let ys: Vec<f64> = idx.iter().map(|&i| pairs[i].1).collect();
        kendall_tau_b(&xs, &ys).ok()
    })
}

/// CI for tau-b by resampling items: each resample recomputes every model's
/// mean score on the drawn items, then tau-b across models.
///
/// `original[m][i]` and `perturbed[m][i]` are model `m`'s score on item `i`.
pub fn bootstrap_tau_ci_items(
    original: &[Vec<f64>],
    perturbed: &[Vec<f64>],
    resamples: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapInterval, StatsError> {
    if original.len() != perturbed.len() {
        return Err(StatsError::LengthMismatch(original.len(), perturbed.len()));
    }
    if original.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: original.len(),
        });
    }
    let n_items = original[0].len();
    for row in original.iter().chain(perturbed) {
        if row.len() != n_items {
            return Err(StatsError::LengthMismatch(n_items, row.len()));
        }
    }
    if n_items == 0 {
        return Err(StatsError::TooFew { needed: 1, got: 0 });
    }
    let mean = |row: &[f64], idx: &[usize]| idx.iter().map(|&i| row[i]).sum::<f64>() / idx.len() as f64;
    bootstrap_percentile(n_items, resamples, seed, level, |idx| {
        let xs: Vec<f64> = original.iter().map(|r| mean(r, idx)).collect();
        let ys: Vec<f64> = perturbed.iter().map(|r| mean(r, idx)).collect();
        kendall_tau_b(&xs, &ys).ok()
    })
}
