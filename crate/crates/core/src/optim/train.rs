//! Gradient training of the recovery network on `λ_r L_r + λ_s W_ν(p_b, q_b)`.
//!
//! θ_b gets central finite differences, the mixer its analytic gradient through
//! the rate estimator. Each epoch takes one backtracking step: the step is
//! halved until the batch objective drops, and skipped if it never does.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LossWeights;
use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::ptn::rate::{estimate_resp_rate, rate_gradient};
use crate::ptn::sdab::resp_alignment;
use crate::ptn::tmb::tmb_grad;
use crate::ptn::{realign_spec, stft, tmb_forward, PtnParams, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_theta: f64,
    pub lr_tmb: f64,
    pub weights: LossWeights,
    pub fd_step: f64,
    /// Samples per epoch; 0 or anything ≥ the set size means full batch.
    pub batch: usize,
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr_theta: 0.5,
            lr_tmb: 0.01,
            weights: LossWeights::default(),
            fd_step: 1e-4,
            batch: 128,
            max_halvings: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch objective before each epoch's step, then after the last one.
    pub loss_trace: Vec<f64>,
    pub accepted_steps: usize,
    pub epochs_run: usize,
}

struct Prepared {
    spec: Spectrogram,
    truth: f64,
}

fn prepare(series: &[Vec<f64>], truth: &[f64], params: &PtnParams) -> Result<Vec<Prepared>> {
    if series.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} series, {} truths", series.len(), truth.len())));
    }
    let items: Vec<(&Vec<f64>, f64)> = series.iter().zip(truth.iter().copied()).collect();
    par::try_map(&items, |(y, t)| {
        let y = dsp::demean(y);
        let spec = stft(&y, params.sample_rate, &params.stft.fit(y.len()))?;
        Ok(Prepared { spec, truth: *t })
    })
}

fn sample_loss(p: &Prepared, params: &PtnParams, theta: &[f64], w: &LossWeights) -> Result<f64> {
    let r = realign_spec(p.spec.clone(), params.band, theta)?;
    let y = tmb_forward(&r.x_hat, &params.tmb)?;
    let rate = estimate_resp_rate(&y, params.sample_rate, params.band)?;
    let mut l = w.lambda_r * (rate.bpm - p.truth).abs();
    if w.lambda_s > 0.0 {
        l += w.lambda_s * resp_alignment(&r.bands, &params.sinkhorn)?.objective;
    }
    Ok(l)
}

fn batch_loss(batch: &[&Prepared], params: &PtnParams, theta: &[f64], w: &LossWeights) -> Result<f64> {
    let ls = par::try_map(batch, |p| sample_loss(p, params, theta, w))?;
    Ok(ls.iter().sum::<f64>() / batch.len() as f64)
}

/// Analytic gradient of the batch rate term with respect to the mixer parameters.
fn tmb_gradient(batch: &[&Prepared], params: &PtnParams, w: &LossWeights) -> Result<Vec<f64>> {
    let scale = w.lambda_r / batch.len() as f64;
    let grads = par::try_map(batch, |p| {
        let r = realign_spec(p.spec.clone(), params.band, &params.theta_b)?;
        let (_, gp, _) = tmb_grad(&r.x_hat, &params.tmb, |y| {
            let (est, g) = rate_gradient(y, params.sample_rate, params.band)?;
            let sign = (est.bpm - p.truth).signum() * if est.bpm == p.truth { 0.0 } else { 1.0 };
            Ok(g.into_iter().map(|v| v * sign * scale).collect())
        })?;
        Ok::<_, Error>(gp)
    })?;
    let mut total = vec![0.0; params.tmb.to_vec().len()];
    for g in grads {
        total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok(total)
}

fn theta_gradient(batch: &[&Prepared], params: &PtnParams, w: &LossWeights, h: f64) -> Result<Vec<f64>> {
    let mut g = vec![0.0; params.theta_b.len()];
    for k in 0..g.len() {
        let mut up = params.theta_b.clone();
        up[k] += h;
        let mut dn = params.theta_b.clone();
        dn[k] -= h;
        g[k] = (batch_loss(batch, params, &up, w)? - batch_loss(batch, params, &dn, w)?) / (2.0 * h);
    }
    Ok(g)
}

/// Sets θ_b to the log mean clean band distribution and calibrates the mixer's
/// normalisation statistics on the masked reconstructions.
pub fn init_ptn(clean: &[Vec<f64>], sample_rate: f64, seed: u64) -> Result<PtnParams> {
    if clean.is_empty() {
        return Err(Error::Empty("calibration series"));
    }
    let mut params = PtnParams::new(sample_rate, seed)?;
    let truth = vec![0.0; clean.len()];
    let prepared = prepare(clean, &truth, &params)?;
    let bands = par::try_map(&prepared, |p| crate::ptn::band_distributions(&p.spec, params.band, &params.theta_b))?;
    let n = params.theta_b.len();
    let mut mean = vec![0.0; n];
    for b in &bands {
        mean.iter_mut().zip(&b.p_b).for_each(|(a, v)| *a += v / bands.len() as f64);
    }
    params.set_prototype(&mean)?;
    let x_hats = par::try_map(&prepared, |p| realign_spec(p.spec.clone(), params.band, &params.theta_b).map(|r| r.x_hat))?;
    params.tmb.calibrate(&x_hats)?;
    Ok(params)
}

/// Trains θ_b and the mixer weights on `(series, truth_bpm)` pairs.
pub fn train_ptn(series: &[Vec<f64>], truth_bpm: &[f64], params: &PtnParams, cfg: &TrainConfig) -> Result<(PtnParams, TrainReport)> {
    cfg.weights.validate()?;
    params.validate()?;
    if !(cfg.lr_theta >= 0.0 && cfg.lr_tmb >= 0.0 && cfg.fd_step > 0.0) {
        return Err(invalid("learning rates must be non-negative and the FD step positive"));
    }
    if series.is_empty() {
        return Err(Error::Empty("training series"));
    }
    let prepared = prepare(series, truth_bpm, params)?;
    let mut params = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7124_1A11);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let full = cfg.batch == 0 || cfg.batch >= prepared.len();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    let mut accepted = 0;
    let mut initial: Option<f64> = None;
    let mut last = f64::NAN;

    for _ in 0..cfg.epochs {
        if !full {
            order.shuffle(&mut rng);
        }
        let take = if full { prepared.len() } else { cfg.batch };
        let batch: Vec<&Prepared> = order[..take].iter().map(|&i| &prepared[i]).collect();
        let l0 = batch_loss(&batch, &params, &params.theta_b, &cfg.weights)?;
        let init = *initial.get_or_insert(l0);
        if !l0.is_finite() || l0 > 10.0 * init {
            return Err(Error::Diverged(format!("batch loss {l0} against initial {init}")));
        }
        trace.push(l0);
        last = l0;
        if cfg.lr_theta == 0.0 && cfg.lr_tmb == 0.0 {
            continue;
        }
        let g_theta = if cfg.lr_theta > 0.0 { theta_gradient(&batch, &params, &cfg.weights, cfg.fd_step)? } else { vec![0.0; params.theta_b.len()] };
        let g_tmb = if cfg.lr_tmb > 0.0 { tmb_gradient(&batch, &params, &cfg.weights)? } else { vec![0.0; params.tmb.to_vec().len()] };
        if g_theta.iter().chain(&g_tmb).any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite gradient".into()));
        }
        let w0 = params.tmb.to_vec();
        let mut step = 1.0;
        for _ in 0..=cfg.max_halvings {
            let mut cand = params.clone();
            cand.theta_b = params.theta_b.iter().zip(&g_theta).map(|(t, g)| t - step * cfg.lr_theta * g).collect();
            let w: Vec<f64> = w0.iter().zip(&g_tmb).map(|(t, g)| t - step * cfg.lr_tmb * g).collect();
            cand.tmb.set_from_vec(&w)?;
            let l1 = batch_loss(&batch, &cand, &cand.theta_b, &cfg.weights)?;
            if l1 < l0 {
                params = cand;
                accepted += 1;
                last = l1;
                break;
            }
            step *= 0.5;
        }
    }
    trace.push(last);
    Ok((params, TrainReport { loss_trace: trace, accepted_steps: accepted, epochs_run: cfg.epochs }))
}

/// Mean absolute rate error of the full network over `(series, truth)`.
pub fn validation_mae(series: &[Vec<f64>], truth_bpm: &[f64], params: &PtnParams) -> Result<f64> {
    let items: Vec<usize> = (0..series.len()).collect();
    let pred = par::try_map(&items, |&i| crate::ptn::ptn_monitor_series(&series[i], params, false).map(|m| m.rate.bpm))?;
    super::loss_r(&pred, truth_bpm)
}
