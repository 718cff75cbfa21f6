//! Grid search over `(β_amp, β_phase)`.
//!
//! Every grid point encrypts the whole cohort, retrains the identity attacker
//! on the encrypted training split and scores the test split for identity
//! leakage, rate error, spectral alignment and morphology distortion.

use serde::{Deserialize, Serialize};

use super::{loss_id, loss_mor, loss_r, loss_sda, total_loss, LossComponents, LossWeights};
use crate::adversary::{features_for, train_classifier, IdFeatureVector, TrainingMeta};
use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::fpe::{encrypt_segment, EncryptedSegment, EncryptionKey, PerturbationParams, DEFAULT_EPSILON_MARGIN};
use crate::harness::cohort::Dataset;
use crate::harness::metrics::{rate_error_stats, StdMode};
use crate::par;
use crate::ptn::sdab::band_distributions_from_mean;
use crate::ptn::{ptn_monitor_series, PtnParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub beta_amp: Vec<f64>,
    pub beta_phase: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            beta_amp: Self::log_axis(0.0, 3.0, 8).unwrap_or_default(),
            beta_phase: Self::log_axis(0.0, 3.0, 4).unwrap_or_default(),
        }
    }
}

impl GridSpec {
    /// `{0}` plus `n − 1` log-spaced values from `10^lo` to `10^hi`.
    pub fn log_axis(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
        if n == 0 || !lo.is_finite() || !hi.is_finite() || hi < lo {
            return Err(invalid("log axis needs n >= 1 and finite lo <= hi"));
        }
        let mut v = vec![0.0];
        let m = n - 1;
        for i in 0..m {
            let e = if m == 1 { lo } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 };
            v.push(10f64.powf(e));
        }
        Ok(v)
    }

    /// Parses `LO:HI:N` as [`GridSpec::log_axis`].
    pub fn parse_axis(s: &str) -> Result<Vec<f64>> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!("grid axis '{s}' is not LO:HI:N")));
        }
        let lo: f64 = parts[0].trim().parse().map_err(|_| invalid(format!("bad LO in '{s}'")))?;
        let hi: f64 = parts[1].trim().parse().map_err(|_| invalid(format!("bad HI in '{s}'")))?;
        let n: usize = parts[2].trim().parse().map_err(|_| invalid(format!("bad N in '{s}'")))?;
        Self::log_axis(lo, hi, n)
    }

    /// Amplitude-major list of grid points.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.beta_amp.iter().flat_map(|&a| self.beta_phase.iter().map(move |&p| (a, p))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub grid: GridSpec,
    pub weights: LossWeights,
    pub mae_budget: f64,
    pub key_bits: usize,
    pub epsilon_margin: usize,
    pub adversary: TrainingMeta,
    pub std_mode: StdMode,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            weights: LossWeights::default(),
            mae_budget: 1.5,
            key_bits: 128,
            epsilon_margin: DEFAULT_EPSILON_MARGIN,
            adversary: TrainingMeta::default(),
            std_mode: StdMode::AsWritten,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn key(&self) -> Result<EncryptionKey> {
        EncryptionKey::random(self.key_bits, self.seed)
    }

    pub fn perturbation(&self, beta_amp: f64, beta_phase: f64) -> PerturbationParams {
        PerturbationParams { beta_amp, beta_phase, epsilon_margin: self.epsilon_margin, ..PerturbationParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub beta_amp: f64,
    pub beta_phase: f64,
    pub irac: f64,
    pub mae_bpm: f64,
    pub std_bpm: f64,
    pub dtw_mean: f64,
    pub losses: LossComponents,
    pub total: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffResult {
    pub beta_amp: f64,
    pub beta_phase: f64,
    pub irac_enc: f64,
    pub mae_bpm: f64,
    pub std_bpm: f64,
    pub dtw_mean: f64,
    pub baseline_irac: f64,
    pub baseline_mae_bpm: f64,
    pub mae_budget: f64,
    pub weights: LossWeights,
    pub pareto_front: Vec<TradeoffPoint>,
    pub points: Vec<TradeoffPoint>,
}

/// Everything one pipeline run over a dataset produces, per test sample.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub encrypted: Vec<EncryptedSegment>,
    pub test_pred_bpm: Vec<f64>,
    pub test_truth_bpm: Vec<f64>,
    pub test_prominence: Vec<f64>,
    pub id_pred: Vec<u32>,
    pub id_truth: Vec<u32>,
    pub id_probs: Vec<Vec<f64>>,
    pub id_class_index: Vec<usize>,
    pub losses: LossComponents,
    pub dtw_mean: f64,
}

fn labelled(feats: &[IdFeatureVector], ds: &Dataset, idx: &[usize]) -> Vec<(IdFeatureVector, u32)> {
    idx.iter().map(|&i| (feats[i].clone(), ds.samples[i].label)).collect()
}

/// Encrypts the cohort, attacks it and monitors the test split.
pub fn run_pipeline(
    ds: &Dataset,
    key: &EncryptionKey,
    perturbation: &PerturbationParams,
    ptn: &PtnParams,
    adversary: TrainingMeta,
    lambda_w: f64,
) -> Result<PipelineRun> {
    if ds.train.is_empty() || ds.test.is_empty() {
        return Err(Error::Empty("train or test split"));
    }
    let fs = ds.sample_rate;
    let encrypted = par::try_map(&ds.samples, |s| encrypt_segment(&s.decomposed, key, perturbation, s.t_res, fs))?;
    let ys: Vec<Vec<f64>> = encrypted.iter().map(|e| e.y.clone()).collect();
    let feats = features_for(&ys, fs)?;
    let clf = train_classifier(&labelled(&feats, ds, &ds.train), adversary)?;
    let test = labelled(&feats, ds, &ds.test);
    let id_probs: Vec<Vec<f64>> = test.iter().map(|(f, _)| clf.predict_proba(f)).collect();
    let id_pred: Vec<u32> = test.iter().map(|(f, _)| clf.predict(f)).collect();
    let id_truth: Vec<u32> = test.iter().map(|(_, l)| *l).collect();
    let id_class_index: Vec<usize> = id_truth
        .iter()
        .map(|l| clf.class_labels.iter().position(|c| c == l).unwrap_or(usize::MAX))
        .collect();
    // Test classes unseen in training get probability 0 via the clamp.
    let probs_for_loss: Vec<Vec<f64>> = id_probs
        .iter()
        .zip(&id_class_index)
        .map(|(p, &k)| if k == usize::MAX { vec![0.0] } else { p.clone() })
        .collect();
    let idx_for_loss: Vec<usize> = id_class_index.iter().map(|&k| if k == usize::MAX { 0 } else { k }).collect();
    let l_id = loss_id(&probs_for_loss, &idx_for_loss)?;

    let monitored = par::try_map(&ds.test, |&i| ptn_monitor_series(&encrypted[i].y, ptn, false))?;
    let test_pred_bpm: Vec<f64> = monitored.iter().map(|m| m.rate.bpm).collect();
    let test_prominence: Vec<f64> = monitored.iter().map(|m| m.rate.prominence).collect();
    let test_truth_bpm: Vec<f64> = ds.test.iter().map(|&i| ds.samples[i].truth_bpm).collect();
    let l_r = loss_r(&test_pred_bpm, &test_truth_bpm)?;

    let first = &monitored[0].bands;
    let bins = first.m_bar.len();
    let mut m_bar = vec![0.0; bins];
    for m in &monitored {
        for (a, b) in m_bar.iter_mut().zip(&m.bands.m_bar) {
            *a += b / monitored.len() as f64;
        }
    }
    let bd = band_distributions_from_mean(&m_bar, &first.freqs, ptn.band, &ptn.theta_b)?;
    let l_sda = loss_sda(&bd, None, &ptn.sinkhorn)?;

    let mors = par::try_map(&ds.test, |&i| {
        let e = &encrypted[i];
        let enc_re: Vec<f64> = e.x_ure.iter().zip(&e.analytic_enc).map(|(a, c)| a + c.re).collect();
        loss_mor(&ds.samples[i].decomposed.x_re(), &enc_re, lambda_w)
    })?;
    let l_mor = dsp::mean(&mors);
    let dtw_mean = dsp::mean(&ds.test.iter().map(|&i| encrypted[i].dtw_score).collect::<Vec<_>>());
    Ok(PipelineRun {
        encrypted,
        test_pred_bpm,
        test_truth_bpm,
        test_prominence,
        id_pred,
        id_truth,
        id_probs,
        id_class_index,
        losses: LossComponents { id: l_id, r: l_r, sda: l_sda, mor: l_mor },
        dtw_mean,
    })
}

pub fn evaluate_point(ds: &Dataset, beta_amp: f64, beta_phase: f64, ptn: &PtnParams, cfg: &SearchConfig) -> Result<TradeoffPoint> {
    let key = cfg.key()?;
    let run = run_pipeline(ds, &key, &cfg.perturbation(beta_amp, beta_phase), ptn, cfg.adversary, cfg.weights.lambda_w)?;
    let (mae, std) = rate_error_stats(&run.test_pred_bpm, &run.test_truth_bpm, cfg.std_mode)?;
    let hits = run.id_pred.iter().zip(&run.id_truth).filter(|(a, b)| a == b).count();
    Ok(TradeoffPoint {
        beta_amp,
        beta_phase,
        irac: hits as f64 / run.id_pred.len() as f64,
        mae_bpm: mae,
        std_bpm: std,
        dtw_mean: run.dtw_mean,
        losses: run.losses,
        total: total_loss(&run.losses, &cfg.weights)?,
        feasible: mae <= cfg.mae_budget,
    })
}

fn dominates(a: &TradeoffPoint, b: &TradeoffPoint) -> bool {
    let ka = [-a.losses.id, a.losses.r, a.losses.sda, a.losses.mor];
    let kb = [-b.losses.id, b.losses.r, b.losses.sda, b.losses.mor];
    ka.iter().zip(&kb).all(|(x, y)| x <= y) && ka.iter().zip(&kb).any(|(x, y)| x < y)
}

/// Points not dominated on the objective's terms (identity loss maximised, the rest minimised).
pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    points.iter().filter(|p| !points.iter().any(|q| dominates(q, p))).cloned().collect()
}

/// Evaluates the grid in parallel and picks the feasible front point with the lowest total loss.
pub fn optimize_betas(ds: &Dataset, ptn: &PtnParams, cfg: &SearchConfig) -> Result<TradeoffResult> {
    cfg.weights.validate()?;
    let grid = cfg.grid.points();
    if grid.is_empty() {
        return Err(invalid("beta grid is empty"));
    }
    if grid.iter().any(|&(a, p)| !(a >= 0.0 && p >= 0.0 && a.is_finite() && p.is_finite())) {
        return Err(invalid("grid betas must be finite and non-negative"));
    }
    if ds.n_classes() < 2 {
        return Err(invalid("search needs at least two personas"));
    }
    let points = par::try_map(&grid, |&(a, p)| evaluate_point(ds, a, p, ptn, cfg))?;
    let baseline = match points.iter().find(|p| p.beta_amp == 0.0 && p.beta_phase == 0.0) {
        Some(p) => p.clone(),
        None => evaluate_point(ds, 0.0, 0.0, ptn, cfg)?,
    };
    let front = pareto_front(&points);
    let chosen = front
        .iter()
        .filter(|p| p.feasible)
        .min_by(|a, b| a.total.total_cmp(&b.total))
        .cloned()
        .ok_or_else(|| invalid(format!("no grid point meets the MAE budget of {} bpm", cfg.mae_budget)))?;
    Ok(TradeoffResult {
        beta_amp: chosen.beta_amp,
        beta_phase: chosen.beta_phase,
        irac_enc: chosen.irac,
        mae_bpm: chosen.mae_bpm,
        std_bpm: chosen.std_bpm,
        dtw_mean: chosen.dtw_mean,
        baseline_irac: baseline.irac,
        baseline_mae_bpm: baseline.mae_bpm,
        mae_budget: cfg.mae_budget,
        weights: cfg.weights,
        pareto_front: front,
        points,
    })
}

/// One row per grid point, amplitude-major, with the front and selection flagged.
pub fn tradeoff_csv(r: &TradeoffResult) -> String {
    let mut s = String::from("beta_amp,beta_phase,irac,mae_bpm,std_bpm,dtw_mean,l_id,l_r,l_sda,l_mor,total,feasible,pareto,selected\n");
    for p in &r.points {
        let on_front = r.pareto_front.iter().any(|q| q.beta_amp == p.beta_amp && q.beta_phase == p.beta_phase);
        let chosen = p.beta_amp == r.beta_amp && p.beta_phase == r.beta_phase;
        s.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{},{},{}\n",
            p.beta_amp,
            p.beta_phase,
            p.irac,
            p.mae_bpm,
            p.std_bpm,
            p.dtw_mean,
            p.losses.id,
            p.losses.r,
            p.losses.sda,
            p.losses.mor,
            p.total,
            p.feasible as u8,
            on_front as u8,
            chosen as u8
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(GridSpec::parse_axis("0:2:3").unwrap(), vec![0.0, 1.0, 100.0]);
        let a = GridSpec::parse_axis("0:2:5").unwrap();
        assert_eq!(a.len(), 5);
        assert!((a[2] - 10f64.powf(2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(GridSpec::parse_axis("1:1:2").unwrap(), vec![0.0, 10.0]);
        assert_eq!(GridSpec::parse_axis("0:3:1").unwrap(), vec![0.0]);
        assert!(GridSpec::parse_axis("0:2").is_err());
        assert!(GridSpec::parse_axis("2:0:3").is_err());
        let g = GridSpec { beta_amp: vec![0.0, 1.0], beta_phase: vec![0.0, 5.0, 6.0] };
        assert_eq!(g.points()[3], (1.0, 0.0));
    }

    fn pt(id: f64, r: f64, total: f64) -> TradeoffPoint {
        TradeoffPoint {
            beta_amp: 0.0,
            beta_phase: 0.0,
            irac: 0.0,
            mae_bpm: r,
            std_bpm: 0.0,
            dtw_mean: 0.0,
            losses: LossComponents { id, r, sda: 0.0, mor: 0.0 },
            total,
            feasible: true,
        }
    }

    #[test]
    fn front_drops_dominated_points() {
        let pts = vec![pt(1.0, 0.1, 0.0), pt(2.0, 0.2, 0.0), pt(0.5, 0.3, 0.0), pt(2.0, 0.2, 0.0)];
        let f = pareto_front(&pts);
        assert_eq!(f.len(), 3);
        assert!(!f.contains(&pts[2]));
    }
}
