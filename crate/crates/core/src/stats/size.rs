use serde::{Deserialize, Serialize};

use super::{check_finite, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDrop {
    pub model_id: String,
    /// Parameter count in any fixed unit; `None` for undisclosed sizes.
    pub parameter_count: Option<f64>,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRobustnessReport {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
    pub n_models: usize,
    pub models_used: Vec<String>,
    pub models_excluded: Vec<String>,
}

/// Pearson r and OLS fit of drop against log10(parameter_count).
pub fn size_robustness(entries: &[ModelDrop]) -> Result<SizeRobustnessReport, StatsError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for e in entries {
        match e.parameter_count {
            Some(p) if p > 0.0 => {
                xs.push(p.log10());
                ys.push(e.drop);
                used.push(e.model_id.clone());
            }
            _ => excluded.push(e.model_id.clone()),
        }
    }
    if xs.len() < 3 {
        return Err(StatsError::TooFew {
            needed: 3,
            got: xs.len(),
        });
    }
    check_finite(&xs)?;
    check_finite(&ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("log model size"));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("performance drop"));
    }
    let slope = sxy / sxx;
    Ok(SizeRobustnessReport {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        slope,
        intercept: my - slope * mx,
        n_models: xs.len(),
        models_used: used,
        models_excluded: excluded,
    })
}
