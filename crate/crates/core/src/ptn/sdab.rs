//! Spectral distribution alignment: band distributions, the reallocation mask
//! and polar reconstruction.

use serde::{Deserialize, Serialize};

use super::sinkhorn::{cost_matrix, default_nu, sinkhorn_with_cost, SinkhornParams, TransportPlan};
use super::stft::{istft, Spectrogram};
use crate::error::{invalid, Error, Result};

pub const RESP_MASK_CLIP: (f64, f64) = (0.5, 2.0);
pub const OTHER_MASK_CLIP: (f64, f64) = (0.25, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDistributions {
    pub f_b: Vec<usize>,
    pub f_o: Vec<usize>,
    pub p_b: Vec<f64>,
    pub p_o: Vec<f64>,
    pub q_b: Vec<f64>,
    pub q_o: Vec<f64>,
    /// Temporal mean magnitude over all bins.
    pub m_bar: Vec<f64>,
    pub freqs: Vec<f64>,
}

impl BandDistributions {
    pub fn freqs_b(&self) -> Vec<f64> {
        self.f_b.iter().map(|&k| self.freqs[k]).collect()
    }

    pub fn freqs_o(&self) -> Vec<f64> {
        self.f_o.iter().map(|&k| self.freqs[k]).collect()
    }
}

/// `(F_b, F_o)` for a bin frequency grid.
pub fn band_bins(freqs: &[f64], band: (f64, f64)) -> (Vec<usize>, Vec<usize>) {
    (0..freqs.len()).partition(|&k| freqs[k] >= band.0 && freqs[k] <= band.1)
}

pub fn softmax(theta: &[f64]) -> Vec<f64> {
    let mx = theta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = theta.iter().map(|t| (t - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Normalises `w`, falling back to uniform when it carries no mass.
pub fn normalize_or_uniform(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s > 0.0 && s.is_finite() {
        w.iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / w.len() as f64; w.len()]
    }
}

pub fn band_distributions_from_mean(m_bar: &[f64], freqs: &[f64], band: (f64, f64), theta_b: &[f64]) -> Result<BandDistributions> {
    if m_bar.len() != freqs.len() {
        return Err(Error::ShapeMismatch("mean spectrum and frequency grid differ".into()));
    }
    let (f_b, f_o) = band_bins(freqs, band);
    if f_b.is_empty() || f_o.is_empty() {
        return Err(invalid("both the respiration band and its complement need at least one bin"));
    }
    if theta_b.len() != f_b.len() {
        return Err(Error::ShapeMismatch(format!("theta_b has {} entries, band has {} bins", theta_b.len(), f_b.len())));
    }
    let p_b = normalize_or_uniform(&f_b.iter().map(|&k| m_bar[k]).collect::<Vec<_>>());
    let p_o = normalize_or_uniform(&f_o.iter().map(|&k| m_bar[k]).collect::<Vec<_>>());
    Ok(BandDistributions {
        q_b: softmax(theta_b),
        q_o: vec![1.0 / f_o.len() as f64; f_o.len()],
        p_b,
        p_o,
        f_b,
        f_o,
        m_bar: m_bar.to_vec(),
        freqs: freqs.to_vec(),
    })
}

pub fn band_distributions(spec: &Spectrogram, band: (f64, f64), theta_b: &[f64]) -> Result<BandDistributions> {
    band_distributions_from_mean(&spec.mean_magnitude(), &spec.freqs, band, theta_b)
}

fn ratio_clip(q: f64, p: f64, clip: (f64, f64), degenerate: f64) -> f64 {
    if p > 0.0 {
        (q / p).clamp(clip.0, clip.1)
    } else {
        degenerate
    }
}

/// Per-bin gain: `clip(q_b/p_b, [0.5, 2])` on the respiration band, `clip(q_o/p_o, [0.25, 1])` elsewhere.
pub fn reallocation_mask(bd: &BandDistributions) -> Vec<f64> {
    let mut mask = vec![1.0; bd.freqs.len()];
    for (i, &k) in bd.f_b.iter().enumerate() {
        mask[k] = ratio_clip(bd.q_b[i], bd.p_b[i], RESP_MASK_CLIP, RESP_MASK_CLIP.1);
    }
    for (i, &k) in bd.f_o.iter().enumerate() {
        mask[k] = ratio_clip(bd.q_o[i], bd.p_o[i], OTHER_MASK_CLIP, OTHER_MASK_CLIP.0);
    }
    mask
}

/// Scales every frame's magnitudes by `mask`, keeps the phases and inverts.
pub fn apply_mask_reconstruct(spec: &Spectrogram, mask: &[f64]) -> Result<Vec<f64>> {
    if mask.len() != spec.bins() {
        return Err(Error::ShapeMismatch(format!("mask has {} entries, spectrogram {} bins", mask.len(), spec.bins())));
    }
    let m = spec.m.iter().map(|row| row.iter().zip(mask).map(|(a, b)| a * b).collect()).collect();
    Ok(istft(&spec.with_magnitudes(m)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentLoss {
    pub resp: TransportPlan,
    pub other: TransportPlan,
}

impl AlignmentLoss {
    pub fn total(&self) -> f64 {
        self.resp.objective + self.other.objective
    }
}

/// `W_ν(p_b, q_b)` alone; the only alignment term that depends on learnable parameters.
pub fn resp_alignment(bd: &BandDistributions, params: &SinkhornParams) -> Result<TransportPlan> {
    let fb = bd.freqs_b();
    let c = cost_matrix(&fb, &fb);
    sinkhorn_with_cost(&bd.p_b, &bd.q_b, &c, default_nu(&c, params.nu_scale), params.max_iters, params.tol)
}

pub fn alignment_loss(bd: &BandDistributions, params: &SinkhornParams) -> Result<AlignmentLoss> {
    let fo = bd.freqs_o();
    let c = cost_matrix(&fo, &fo);
    let other = sinkhorn_with_cost(&bd.p_o, &bd.q_o, &c, default_nu(&c, params.nu_scale), params.max_iters, params.tol)?;
    Ok(AlignmentLoss { resp: resp_alignment(bd, params)?, other })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp;
    use crate::ptn::stft::{stft, StftConfig};

    fn grid() -> Vec<f64> {
        (0..513).map(|k| k as f64 * 20.0 / 1024.0).collect()
    }

    #[test]
    fn uniform_spectrum_gives_uniform_distributions() {
        let f = grid();
        let (fb, _) = band_bins(&f, (0.1, 0.5));
        let bd = band_distributions_from_mean(&vec![2.0; 513], &f, (0.1, 0.5), &vec![0.0; fb.len()]).unwrap();
        assert_eq!(bd.f_b.len(), 20);
        assert!(bd.p_b.iter().all(|v| (v - 1.0 / 20.0).abs() < 1e-15));
        assert!(bd.p_o.iter().all(|v| (v - 1.0 / 493.0).abs() < 1e-15));
        assert!(bd.q_b.iter().all(|v| (v - 1.0 / 20.0).abs() < 1e-15));
        assert!(reallocation_mask(&bd).iter().all(|&m| (m - 1.0).abs() < 1e-12));
    }

    #[test]
    fn one_hot_and_degenerate_bands() {
        let f = grid();
        let mut mb = vec![0.0; 513];
        mb[10] = 3.0;
        let bd = band_distributions_from_mean(&mb, &f, (0.1, 0.5), &vec![0.0; 20]).unwrap();
        let hot = bd.f_b.iter().position(|&k| k == 10).unwrap();
        assert_eq!(bd.p_b[hot], 1.0);
        assert!(bd.p_o.iter().all(|v| (v - 1.0 / 493.0).abs() < 1e-15));
        let mask = reallocation_mask(&bd);
        assert_eq!(mask[10], 0.5);
        assert_eq!(mask[11], 2.0);
        assert!(band_distributions_from_mean(&mb, &f, (0.1, 0.5), &[0.0; 3]).is_err());
    }

    #[test]
    fn clip_bounds() {
        let f = grid();
        let mut mb = vec![1.0; 513];
        mb[100] = 1.0 / 0.1 * 493.0;
        let bd = band_distributions_from_mean(&mb, &f, (0.1, 0.5), &vec![0.0; 20]).unwrap();
        assert_eq!(reallocation_mask(&bd)[100], 0.25);
        let mut bd = bd;
        bd.p_b = vec![1.0 / 60.0; 20];
        bd.p_b[0] = 1.0 - 19.0 / 60.0;
        bd.q_b = vec![0.05; 20];
        assert_eq!(reallocation_mask(&bd)[bd.f_b[1]], 2.0);
    }

    #[test]
    fn unit_mask_is_identity_and_homogeneous() {
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.08).sin() + 0.3 * (i as f64 * 0.9).sin()).collect();
        let s = stft(&x, 20.0, &StftConfig::default()).unwrap();
        let y = apply_mask_reconstruct(&s, &vec![1.0; s.bins()]).unwrap();
        assert!(dsp::rel_l2_error(&y, &x) < 1e-10);
        let x2: Vec<f64> = x.iter().map(|v| 3.5 * v).collect();
        let s2 = stft(&x2, 20.0, &StftConfig::default()).unwrap();
        let mask: Vec<f64> = (0..s.bins()).map(|k| 0.25 + (k % 7) as f64 * 0.2).collect();
        let a = apply_mask_reconstruct(&s, &mask).unwrap();
        let b = apply_mask_reconstruct(&s2, &mask).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| (3.5 * u - v).abs() < 1e-9 * (1.0 + v.abs())));
    }
}
