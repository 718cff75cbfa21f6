//! Losses, the combined objective and the two searches built on them:
//! a grid over perturbation weights and gradient training of the recovery network.

pub mod search;
pub mod train;

use serde::{Deserialize, Serialize};

pub use search::{evaluate_point, optimize_betas, pareto_front, run_pipeline, GridSpec, PipelineRun, SearchConfig, TradeoffPoint, TradeoffResult};
pub use train::{init_ptn, train_ptn, validation_mae, TrainConfig, TrainReport};

use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::fpe::{dtw_distance, envelope};
use crate::ptn::sdab::BandDistributions;
use crate::ptn::sinkhorn::{cost_matrix, default_nu, sinkhorn_with_cost, SinkhornParams};

/// Probabilities below this are clamped before the logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_id: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub lambda_mor: f64,
    /// Weight of the gradient term inside the morphology loss.
    pub lambda_w: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_id: 1.0, lambda_r: 1.0, lambda_s: 0.1, lambda_mor: 0.01, lambda_w: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_id, self.lambda_r, self.lambda_s, self.lambda_mor, self.lambda_w];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(invalid("loss weights must be finite and non-negative"))
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            lambda_id: k * self.lambda_id,
            lambda_r: k * self.lambda_r,
            lambda_s: k * self.lambda_s,
            lambda_mor: k * self.lambda_mor,
            lambda_w: self.lambda_w,
        }
    }
}

/// Mean negative log-likelihood of the true class; `labels` index into each row.
pub fn loss_id(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} probability rows, {} labels", probs.len(), labels.len())));
    }
    if probs.is_empty() {
        return Err(Error::Empty("identity predictions"));
    }
    let mut s = 0.0;
    for (row, &y) in probs.iter().zip(labels) {
        let p = *row.get(y).ok_or_else(|| Error::ShapeMismatch(format!("label {y} outside {} classes", row.len())))?;
        if !p.is_finite() {
            return Err(Error::NonFinite("class probability"));
        }
        s -= p.max(PROB_FLOOR).ln();
    }
    Ok(s / probs.len() as f64)
}

/// Mean absolute rate error.
pub fn loss_r(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions, {} truths", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::Empty("rate lists"));
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

/// `W_ν(p_b, q_b) + W_ν(p_o, q_o)`. `nu = None` picks the per-band default from `params`.
pub fn loss_sda(bd: &BandDistributions, nu: Option<f64>, params: &SinkhornParams) -> Result<f64> {
    let mut total = 0.0;
    for (p, q, f) in [(&bd.p_b, &bd.q_b, bd.freqs_b()), (&bd.p_o, &bd.q_o, bd.freqs_o())] {
        let c = cost_matrix(&f, &f);
        let nu = nu.unwrap_or_else(|| default_nu(&c, params.nu_scale));
        total += sinkhorn_with_cost(p, q, &c, nu, params.max_iters, params.tol)?.objective;
    }
    Ok(total)
}

/// Central differences, one-sided at the ends.
pub fn temporal_gradient(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| match i {
            _ if n < 2 => 0.0,
            0 => x[1] - x[0],
            i if i == n - 1 => x[n - 1] - x[n - 2],
            i => 0.5 * (x[i + 1] - x[i - 1]),
        })
        .collect()
}

/// Envelope DTW plus `λ_w`·mean |∇original − ∇encrypted| (index-paired).
pub fn loss_mor(original: &[f64], encrypted: &[f64], lambda_w: f64) -> Result<f64> {
    if original.len() != encrypted.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", original.len(), encrypted.len())));
    }
    if original.is_empty() {
        return Ok(0.0);
    }
    let d = dtw_distance(&envelope(original)?, &envelope(encrypted)?);
    let ga = temporal_gradient(original);
    let gb = temporal_gradient(encrypted);
    let g = ga.iter().zip(&gb).map(|(a, b)| (a - b).abs()).sum::<f64>() / ga.len() as f64;
    Ok(d + lambda_w * g)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub id: f64,
    pub r: f64,
    pub sda: f64,
    pub mor: f64,
}

/// `λ_r L_r + λ_s L_SDA + λ_mor L_mor − λ_id L_id`; minimising it maximises identity error.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    if ![c.id, c.r, c.sda, c.mor].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("loss component"));
    }
    Ok(w.lambda_r * c.r + w.lambda_s * c.sda + w.lambda_mor * c.mor - w.lambda_id * c.id)
}

/// Pearson correlation of ranks (average ranks for ties).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("spearman needs two equal-length lists of at least 2"));
    }
    let rank = |x: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            for k in i..=j {
                r[idx[k]] = (i + j) as f64 / 2.0;
            }
            i = j + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let (ma, mb) = (dsp::mean(&ra), dsp::mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (va * vb).sqrt())
}
