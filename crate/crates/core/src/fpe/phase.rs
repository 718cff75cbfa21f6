//! Analytic signals and the key-controlled phase rotation.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use super::key::EncryptionKey;
use super::noise::adaptive_intensity;
use crate::dsp;
use crate::error::{ensure_finite, Error, Result};
use crate::preprocess::unwrap_phase;

/// Analytic signal by the one-sided spectrum construction.
pub fn hilbert_analytic(x: &[f64]) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let mut spec = dsp::fft_real(x);
    for (k, v) in spec.iter_mut().enumerate() {
        let h = if k == 0 || (n % 2 == 0 && k == n / 2) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *v *= h;
    }
    dsp::ifft_in_place(&mut spec);
    Ok(spec)
}

pub fn envelope(x: &[f64]) -> Result<Vec<f64>> {
    Ok(hilbert_analytic(x)?.iter().map(|c| c.norm()).collect())
}

/// Gaussian window with standard deviation `T_res / 4`.
pub fn phase_window(t: f64, t_res: f64) -> f64 {
    let eta = t_res / 4.0;
    (-(t * t) / (2.0 * eta * eta)).exp()
}

/// `φ(k, t) = Σ k_i (π / 2^i) g(t − iΔt)` with `Δt = segment_duration / L`.
pub fn phase_perturbation_fn(key: &EncryptionKey, t: f64, segment_duration: f64, t_res: f64) -> f64 {
    let dt = segment_duration / key.len() as f64;
    let mut weight = PI;
    let mut acc = 0.0;
    for (i, &b) in key.bits().iter().enumerate() {
        if weight == 0.0 {
            break;
        }
        if b {
            acc += weight * phase_window(t - i as f64 * dt, t_res);
        }
        weight *= 0.5;
    }
    acc
}

/// `φ(k, t)` sampled at `t = i / fs` for `n` samples.
pub fn phase_perturbation_series(key: &EncryptionKey, n: usize, sample_rate: f64, t_res: f64) -> Vec<f64> {
    let dur = n as f64 / sample_rate;
    (0..n)
        .map(|i| phase_perturbation_fn(key, i as f64 / sample_rate, dur, t_res))
        .collect()
}

/// Positive-frequency spectrum bins of `x` inside `band`.
pub fn band_spectrum(x: &[f64], sample_rate: f64, band: (f64, f64)) -> Vec<Complex64> {
    let n = x.len();
    let spec = dsp::fft_real(x);
    (0..=n / 2)
        .filter(|&k| dsp::bin_in_band(k, n, sample_rate, band))
        .map(|k| spec[k])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePerturbation {
    pub x_enc: Vec<f64>,
    pub analytic_enc: Vec<Complex64>,
    pub analytic_pd: Vec<Complex64>,
    pub gamma_f: f64,
}

/// Rotates the analytic form of `x_pd` by `exp(j γ_f φ(k, t))`.
pub fn apply_phase_perturbation(
    x_pd: &[f64],
    key: &EncryptionKey,
    beta_phase: f64,
    t_res: f64,
    sample_rate: f64,
    resp_band: (f64, f64),
) -> Result<PhasePerturbation> {
    ensure_finite(x_pd, "x_pd")?;
    let analytic_pd = hilbert_analytic(x_pd)?;
    let band = band_spectrum(x_pd, sample_rate, resp_band);
    let gamma_f = if band.is_empty() { 0.0 } else { adaptive_intensity(&band, beta_phase)? };
    if gamma_f == 0.0 {
        return Ok(PhasePerturbation {
            x_enc: x_pd.to_vec(),
            analytic_enc: analytic_pd.clone(),
            analytic_pd,
            gamma_f,
        });
    }
    let phi = phase_perturbation_series(key, x_pd.len(), sample_rate, t_res);
    let analytic_enc: Vec<Complex64> = analytic_pd
        .iter()
        .zip(&phi)
        .map(|(a, p)| a * Complex64::from_polar(1.0, gamma_f * p))
        .collect();
    let x_enc = analytic_enc.iter().map(|c| c.re).collect();
    Ok(PhasePerturbation { x_enc, analytic_enc, analytic_pd, gamma_f })
}

/// Inverse rotation `exp(−j γ_f φ(k, t))`.
pub fn remove_phase_perturbation(
    analytic_enc: &[Complex64],
    key: &EncryptionKey,
    gamma_f: f64,
    t_res: f64,
    sample_rate: f64,
) -> Vec<Complex64> {
    if gamma_f == 0.0 {
        return analytic_enc.to_vec();
    }
    let phi = phase_perturbation_series(key, analytic_enc.len(), sample_rate, t_res);
    analytic_enc
        .iter()
        .zip(&phi)
        .map(|(a, p)| a * Complex64::from_polar(1.0, -gamma_f * p))
        .collect()
}

/// Instantaneous frequency deviation (Hz) of `enc` relative to `reference`.
pub fn inst_freq_deviation(enc: &[Complex64], reference: &[Complex64], sample_rate: f64) -> Result<Vec<f64>> {
    if enc.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} samples", enc.len(), reference.len())));
    }
    let n = enc.len();
    let wrapped: Vec<f64> = enc
        .iter()
        .zip(reference)
        .map(|(a, b)| crate::preprocess::wrapped_angle(a * b.conj()))
        .collect();
    let phase = unwrap_phase(&wrapped);
    let scale = sample_rate / TAU;
    Ok((0..n)
        .map(|i| match (i, n) {
            (_, 1) => 0.0,
            (0, _) => (phase[1] - phase[0]) * scale,
            (i, n) if i == n - 1 => (phase[n - 1] - phase[n - 2]) * scale,
            (i, _) => (phase[i + 1] - phase[i - 1]) * 0.5 * scale,
        })
        .collect())
}

/// `|F{Δf}|²`, the power spectrum of a frequency-deviation series.
pub fn deviation_power_spectrum(deviation: &[f64]) -> Vec<f64> {
    dsp::fft_real(deviation).iter().map(|c| c.norm_sqr()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hilbert_of_cosine_is_complex_exponential() {
        let n = 400;
        let f = 0.25;
        let x: Vec<f64> = (0..n).map(|i| (TAU * f * i as f64 / 20.0).cos()).collect();
        let a = hilbert_analytic(&x).unwrap();
        for i in 0..n {
            assert!((a[i].re - x[i]).abs() < 1e-10);
            // Quadrature oracle: sin(2πft).
            assert!((a[i].im - (TAU * f * i as f64 / 20.0).sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn hilbert_edge_cases() {
        assert!(hilbert_analytic(&[1.0, 2.0, 3.0]).is_err());
        assert!(hilbert_analytic(&[0.0; 16]).unwrap().iter().all(|c| c.norm() == 0.0));
        let odd: Vec<f64> = (0..17).map(|i| (i as f64).sin()).collect();
        let a = hilbert_analytic(&odd).unwrap();
        for i in 0..17 {
            assert!((a[i].re - odd[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn window_values() {
        assert_eq!(phase_window(0.0, 4.0), 1.0);
        assert!((phase_window(1.0, 4.0) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((phase_window(1.0, 4.0) - 0.60653).abs() < 1e-5);
        assert_eq!(phase_window(-1.7, 3.0), phase_window(1.7, 3.0));
    }

    #[test]
    fn perturbation_fn_examples() {
        let zero = EncryptionKey::from_slice(&[0; 16]).unwrap();
        assert_eq!(phase_perturbation_fn(&zero, 3.0, 20.0, 4.0), 0.0);
        let mut bits = [0u8; 16];
        bits[0] = 1;
        let k0 = EncryptionKey::from_slice(&bits).unwrap();
        assert!((phase_perturbation_fn(&k0, 0.0, 20.0, 4.0) - PI).abs() < 1e-15);
        let ones = EncryptionKey::from_slice(&[1; 16]).unwrap();
        for i in 0..200 {
            assert!(phase_perturbation_fn(&ones, i as f64 * 0.1, 20.0, 4.0).abs() < TAU);
        }
    }

    #[test]
    fn constant_rate_rotation_gives_constant_deviation() {
        let n = 256;
        let fs = 20.0;
        let gamma = 0.7; // rad/s
        let base: Vec<Complex64> = (0..n).map(|i| Complex64::from_polar(1.0 + 0.1 * (i as f64 * 0.05).sin(), 0.3 * i as f64)).collect();
        let rot: Vec<Complex64> = base
            .iter()
            .enumerate()
            .map(|(i, b)| b * Complex64::from_polar(1.0, gamma * i as f64 / fs))
            .collect();
        let dev = inst_freq_deviation(&rot, &base, fs).unwrap();
        for v in &dev[1..n - 1] {
            assert!((v - gamma / TAU).abs() < 1e-6);
        }
        assert!(inst_freq_deviation(&base, &base, fs).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(inst_freq_deviation(&base[..3], &base, fs).is_err());
    }
}
