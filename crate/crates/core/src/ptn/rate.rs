//! Respiration rate from the in-band spectral peak.
//!
//! The series is first projected onto the DFT bins of the band, so energy
//! outside the band never reaches the peak search; the projection is then
//! zero-padded and the peak refined by a parabola through log-magnitudes.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure_finite, invalid, Error, Result};

/// Zero-padding factor over the next power of two of the series length.
pub const PAD_FACTOR: usize = 16;
/// Peak-to-band-median ratio below which an estimate is flagged as unreliable.
pub const MIN_PROMINENCE: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub bpm: f64,
    pub freq_hz: f64,
    pub prominence: f64,
    pub confident: bool,
}

struct Peak {
    est: RateEstimate,
    k: usize,
    nfft: usize,
    logs: [f64; 3],
    spec: [Complex64; 3],
}

/// Projects `y` onto the DFT bins whose |frequency| lies in `band` (removes the mean too).
fn band_project(y: &[Complex64], sample_rate: f64, band: (f64, f64)) -> Vec<Complex64> {
    let n = y.len();
    let mut buf = y.to_vec();
    dsp::fft_in_place(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || !dsp::bin_in_band(k, n, sample_rate, band) {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::ifft_in_place(&mut buf);
    buf
}

fn find_peak(y: &[f64], sample_rate: f64, band: (f64, f64)) -> Result<Peak> {
    ensure_finite(y, "rate input")?;
    if !(sample_rate > 0.0) || !(0.0 <= band.0 && band.0 < band.1 && band.1 <= sample_rate / 2.0) {
        return Err(invalid("rate band must lie inside [0, fs/2]"));
    }
    if y.len() < 4 {
        return Err(Error::TooShort { needed: 4, got: y.len() });
    }
    let yc: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let xb: Vec<f64> = band_project(&yc, sample_rate, band).iter().map(|c| c.re).collect();
    let nfft = dsp::next_pow2(y.len()) * PAD_FACTOR;
    let spec = dsp::fft_real_padded(&xb, nfft);
    let lo = (band.0 * nfft as f64 / sample_rate).ceil().max(1.0) as usize;
    let hi = ((band.1 * nfft as f64 / sample_rate).floor() as usize).min(nfft / 2 - 1);
    if lo > hi {
        return Err(invalid("rate band contains no FFT bins"));
    }
    let mags: Vec<f64> = (lo..=hi).map(|k| spec[k].norm()).collect();
    let (rel, &peak) = mags.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).ok_or(Error::NoRespiration)?;
    if !(peak > 1e-300) {
        return Err(Error::NoRespiration);
    }
    let k = lo + rel;
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    let prominence = if median > 0.0 { peak / median } else { f64::INFINITY };
    let triple = [spec[k - 1], spec[k], spec[k + 1]];
    let logs = triple.map(|c| c.norm().max(1e-300).ln());
    let den = logs[0] - 2.0 * logs[1] + logs[2];
    let delta = if den < 0.0 { (0.5 * (logs[0] - logs[2]) / den).clamp(-0.5, 0.5) } else { 0.0 };
    let freq_hz = (k as f64 + delta) * sample_rate / nfft as f64;
    Ok(Peak {
        est: RateEstimate { bpm: 60.0 * freq_hz, freq_hz, prominence, confident: prominence >= MIN_PROMINENCE },
        k,
        nfft,
        logs,
        spec: triple,
    })
}

pub fn estimate_resp_rate(y: &[f64], sample_rate: f64, band: (f64, f64)) -> Result<RateEstimate> {
    Ok(find_peak(y, sample_rate, band)?.est)
}

/// Rate estimate plus `d bpm / d y`, holding the selected peak bin fixed.
pub fn rate_gradient(y: &[f64], sample_rate: f64, band: (f64, f64)) -> Result<(RateEstimate, Vec<f64>)> {
    let pk = find_peak(y, sample_rate, band)?;
    let n = y.len();
    let [a, b, c] = pk.logs;
    let den = a - 2.0 * b + c;
    let raw = if den < 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    if den >= 0.0 || raw.abs() >= 0.5 {
        return Ok((pk.est, vec![0.0; n]));
    }
    let d2 = den * den;
    let dd = [(c - b) / d2, (a - c) / d2, (b - a) / d2];
    let scale = 60.0 * sample_rate / pk.nfft as f64;
    let theta = -2.0 * std::f64::consts::PI / pk.nfft as f64;
    let mut grad = vec![0.0; n];
    for (idx, off) in [-1isize, 0, 1].iter().enumerate() {
        let j = (pk.k as isize + off) as usize;
        let yj = pk.spec[idx];
        let m2 = yj.norm_sqr();
        if m2 == 0.0 {
            continue;
        }
        let basis: Vec<Complex64> = (0..n).map(|t| Complex64::from_polar(1.0, theta * (j * t % pk.nfft) as f64)).collect();
        let dyj = band_project(&basis, sample_rate, band);
        for t in 0..n {
            grad[t] += scale * dd[idx] * (yj.conj() * dyj[t]).re / m2;
        }
    }
    Ok((pk.est, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn tone(f: f64, secs: f64, fs: f64) -> Vec<f64> {
        (0..(secs * fs) as usize).map(|i| (2.0 * PI * f * i as f64 / fs + 0.4).sin()).collect()
    }

    #[test]
    fn known_tones() {
        let r = estimate_resp_rate(&tone(0.25, 60.0, 20.0), 20.0, (0.1, 0.5)).unwrap();
        assert!((r.bpm - 15.0).abs() < 0.1, "{}", r.bpm);
        assert!(r.confident);
        let r = estimate_resp_rate(&tone(0.5, 60.0, 20.0), 20.0, (0.1, 0.6)).unwrap();
        assert!((r.bpm - 30.0).abs() < 0.2, "{}", r.bpm);
    }

    #[test]
    fn zero_band_and_noise() {
        assert!(matches!(estimate_resp_rate(&[0.0; 400], 20.0, (0.1, 0.5)), Err(Error::NoRespiration)));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noise: Vec<f64> = (0..400).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = estimate_resp_rate(&noise, 20.0, (0.1, 0.5)).unwrap();
        assert!(r.prominence.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y: Vec<f64> = tone(0.27, 20.0, 20.0).iter().map(|v| v + 0.05 * rng.random_range(-1.0..1.0)).collect();
        let (_, g) = rate_gradient(&y, 20.0, (0.1, 0.5)).unwrap();
        let h = 1e-6;
        for t in [0usize, 37, 150, 399] {
            let mut a = y.clone();
            a[t] += h;
            let up = estimate_resp_rate(&a, 20.0, (0.1, 0.5)).unwrap().bpm;
            a[t] -= 2.0 * h;
            let dn = estimate_resp_rate(&a, 20.0, (0.1, 0.5)).unwrap().bpm;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - g[t]).abs() < 1e-4 * fd.abs().max(1e-2), "t={t} fd={fd} g={}", g[t]);
        }
    }
}
