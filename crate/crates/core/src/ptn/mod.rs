//! Perturbation-tolerant rate recovery.
//!
//! `stft → band distributions → reallocation mask → polar reconstruction →
//! temporal mixer → spectral-peak rate`. The two transport alignments are
//! reported as losses and do not change the reconstruction.

pub mod rate;
pub mod sdab;
pub mod sinkhorn;
pub mod stft;
pub mod tmb;

use serde::{Deserialize, Serialize};

pub use rate::{estimate_resp_rate, rate_gradient, RateEstimate};
pub use sdab::{
    alignment_loss, apply_mask_reconstruct, band_bins, band_distributions, reallocation_mask, AlignmentLoss,
    BandDistributions,
};
pub use sinkhorn::{sinkhorn, SinkhornParams, TransportPlan};
pub use stft::{istft, stft, Spectrogram, StftConfig};
pub use tmb::{tmb_forward, TmbParams};

use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::fpe::EncryptedSegment;
use crate::RESP_BAND;

pub const TMB_LAYERS: usize = 2;
pub const TMB_KERNEL: usize = 5;
pub const TMB_CHANNELS: usize = 8;

/// Everything `monitor` needs to run: STFT geometry, learnable prototype and mixer weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtnParams {
    pub stft: StftConfig,
    pub sample_rate: f64,
    pub band: (f64, f64),
    pub theta_b: Vec<f64>,
    pub tmb: TmbParams,
    pub sinkhorn: SinkhornParams,
}

impl PtnParams {
    /// Uniform prototype and an identity mixer.
    pub fn new(sample_rate: f64, seed: u64) -> Result<Self> {
        let stft = StftConfig::default();
        let n = Self::resp_bins(&stft, sample_rate, RESP_BAND).len();
        Ok(Self {
            stft,
            sample_rate,
            band: RESP_BAND,
            theta_b: vec![0.0; n],
            tmb: TmbParams::new(TMB_LAYERS, TMB_KERNEL, TMB_CHANNELS, seed)?,
            sinkhorn: SinkhornParams::default(),
        })
    }

    pub fn resp_bins(stft: &StftConfig, sample_rate: f64, band: (f64, f64)) -> Vec<usize> {
        let freqs: Vec<f64> = (0..stft.n_bins()).map(|k| k as f64 * sample_rate / stft.fft_size as f64).collect();
        band_bins(&freqs, band).0
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.tmb.validate()?;
        let n = Self::resp_bins(&self.stft, self.sample_rate, self.band).len();
        if n == 0 {
            return Err(invalid("respiration band holds no STFT bins"));
        }
        if self.theta_b.len() != n {
            return Err(Error::ShapeMismatch(format!("theta_b has {} entries, band has {n} bins", self.theta_b.len())));
        }
        if self.theta_b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta_b"));
        }
        Ok(())
    }

    /// Sets `θ_b = log p̄_b` from an average clean respiration-band distribution.
    pub fn set_prototype(&mut self, p_b_mean: &[f64]) -> Result<()> {
        if p_b_mean.len() != self.theta_b.len() {
            return Err(Error::ShapeMismatch("prototype length".into()));
        }
        self.theta_b = p_b_mean.iter().map(|p| p.max(1e-12).ln()).collect();
        Ok(())
    }
}

/// Masked reconstruction before the temporal mixer.
#[derive(Debug, Clone)]
pub struct Realigned {
    pub x_hat: Vec<f64>,
    pub spec: Spectrogram,
    pub bands: BandDistributions,
    pub mask: Vec<f64>,
}

pub fn realign(y: &[f64], params: &PtnParams) -> Result<Realigned> {
    realign_with_theta(y, params, &params.theta_b)
}

pub fn realign_with_theta(y: &[f64], params: &PtnParams, theta_b: &[f64]) -> Result<Realigned> {
    let cfg = params.stft.fit(y.len());
    let spec = stft(y, params.sample_rate, &cfg)?;
    realign_spec(spec, params.band, theta_b)
}

pub fn realign_spec(spec: Spectrogram, band: (f64, f64), theta_b: &[f64]) -> Result<Realigned> {
    let bands = band_distributions(&spec, band, theta_b)?;
    let mask = reallocation_mask(&bands);
    let x_hat = apply_mask_reconstruct(&spec, &mask)?;
    Ok(Realigned { x_hat, spec, bands, mask })
}

#[derive(Debug, Clone)]
pub struct MonitorOutput {
    pub rate: RateEstimate,
    pub reconstructed: Vec<f64>,
    pub mask: Vec<f64>,
    pub bands: BandDistributions,
    pub alignment: Option<AlignmentLoss>,
}

/// Runs the full recovery chain on a perturbed series (mean removed first).
pub fn ptn_monitor_series(y: &[f64], params: &PtnParams, with_losses: bool) -> Result<MonitorOutput> {
    params.validate()?;
    let y = dsp::demean(y);
    let r = realign(&y, params)?;
    let alignment = if with_losses { Some(alignment_loss(&r.bands, &params.sinkhorn)?) } else { None };
    let out = tmb_forward(&r.x_hat, &params.tmb)?;
    let rate = estimate_resp_rate(&out, params.sample_rate, params.band)?;
    Ok(MonitorOutput { rate, reconstructed: out, mask: r.mask, bands: r.bands, alignment })
}

pub fn ptn_monitor(enc: &EncryptedSegment, params: &PtnParams, with_losses: bool) -> Result<MonitorOutput> {
    if (enc.sample_rate - params.sample_rate).abs() > 1e-9 {
        return Err(invalid(format!(
            "segment sampled at {} Hz, network configured for {} Hz",
            enc.sample_rate, params.sample_rate
        )));
    }
    ptn_monitor_series(&enc.y, params, with_losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn default_band_has_twenty_bins() {
        let p = PtnParams::new(20.0, 0).unwrap();
        assert_eq!(p.theta_b.len(), 20);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn clean_tone_rate() {
        let p = PtnParams::new(20.0, 0).unwrap();
        let y: Vec<f64> = (0..400).map(|i| (2.0 * PI * 0.26 * i as f64 / 20.0).sin()).collect();
        let out = ptn_monitor_series(&y, &p, true).unwrap();
        assert!((out.rate.bpm - 15.6).abs() < 0.5, "{}", out.rate.bpm);
        let a = out.alignment.unwrap();
        assert!(a.resp.marginal_error < 1e-6 && a.other.marginal_error < 1e-6);
    }

    #[test]
    fn identity_chain_matches_raw_estimate() {
        let p = PtnParams::new(20.0, 0).unwrap();
        let y: Vec<f64> = (0..400).map(|i| (2.0 * PI * 0.3 * i as f64 / 20.0).sin() + 0.2 * (i as f64 * 0.9).cos()).collect();
        let spec = stft(&y, 20.0, &p.stft).unwrap();
        let x = apply_mask_reconstruct(&spec, &vec![1.0; spec.bins()]).unwrap();
        let a = estimate_resp_rate(&tmb_forward(&x, &p.tmb).unwrap(), 20.0, RESP_BAND).unwrap();
        let b = estimate_resp_rate(&y, 20.0, RESP_BAND).unwrap();
        assert!((a.bpm - b.bpm).abs() < 1e-6);
    }
}
