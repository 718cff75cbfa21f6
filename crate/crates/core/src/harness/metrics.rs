//! Rate-error statistics, identity accuracy and the per-scenario report.

use serde::{Deserialize, Serialize};

use crate::adversary::{accuracy, ConfusionMatrix};
use crate::error::{Error, Result};

/// How σ is computed from per-sample errors `e_j = b̂_j − b_j`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// `sqrt(Σ (e_j − μ)² / J)` with signed `e_j` and `μ` the mean absolute error.
    #[default]
    AsWritten,
    /// Population standard deviation of `|e_j|`.
    AbsoluteErrors,
}

/// `(μ, σ)` of the rate errors.
pub fn rate_error_stats(pred: &[f64], truth: &[f64], mode: StdMode) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions, {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("rate lists"));
    }
    let j = pred.len() as f64;
    let errs: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| a - b).collect();
    let mu = errs.iter().map(|e| e.abs()).sum::<f64>() / j;
    let var = match mode {
        StdMode::AsWritten => errs.iter().map(|e| (e - mu).powi(2)).sum::<f64>() / j,
        StdMode::AbsoluteErrors => errs.iter().map(|e| (e.abs() - mu).powi(2)).sum::<f64>() / j,
    };
    Ok((mu, var.sqrt()))
}

/// Empirical CDF of absolute errors as `(error, fraction ≤ error)` at every distinct error.
pub fn error_cdf(pred: &[f64], truth: &[f64]) -> Vec<(f64, f64)> {
    let mut e: Vec<f64> = pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).collect();
    e.sort_by(|a, b| a.total_cmp(b));
    let n = e.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, v) in e.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *v => last.1 = frac,
            _ => out.push((*v, frac)),
        }
    }
    out
}

/// Scenario cell descriptor; its `key` orders reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub distance_m: f64,
    pub pattern: super::cohort::Pattern,
    pub duration_s: f64,
    pub seed: u64,
}

impl Scenario {
    pub fn key(&self) -> String {
        format!("d{:07.3}_{}_t{:07.3}_s{:010}", self.distance_m, self.pattern, self.duration_s, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Scenario,
    pub mae_bpm: f64,
    pub std_bpm: f64,
    pub irac: f64,
    pub cdf_points: Vec<(f64, f64)>,
    pub confusion: ConfusionMatrix,
    pub n_samples: usize,
}

pub fn compute_metrics(
    pred_rates: &[f64],
    true_rates: &[f64],
    id_preds: &[u32],
    id_truth: &[u32],
    scenario: Scenario,
    mode: StdMode,
) -> Result<MetricsReport> {
    let (mae_bpm, std_bpm) = rate_error_stats(pred_rates, true_rates, mode)?;
    Ok(MetricsReport {
        scenario,
        mae_bpm,
        std_bpm,
        irac: accuracy(id_preds, id_truth)?,
        cdf_points: error_cdf(pred_rates, true_rates),
        confusion: ConfusionMatrix::from_predictions(id_preds, id_truth)?,
        n_samples: pred_rates.len(),
    })
}
