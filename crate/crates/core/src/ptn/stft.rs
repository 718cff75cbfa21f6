//! Short-time Fourier transform with weighted overlap-add inversion.
//!
//! The series is reflect-padded by `window - hop` on the left (and enough on
//! the right to land on a frame boundary) so every original sample is covered
//! by the same number of frames. Analysis and synthesis both use a periodic
//! Hann window; the inverse divides by the accumulated squared window.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure_finite, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub window: usize,
    pub hop: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { window: 256, hop: 64, fft_size: 1024 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 || self.hop == 0 || self.window > self.fft_size {
            return Err(invalid("STFT needs 2 <= window <= fft_size and hop >= 1"));
        }
        if self.window % self.hop != 0 || self.window / self.hop < 2 {
            return Err(invalid("STFT hop must divide the window by an integer factor >= 2"));
        }
        Ok(())
    }

    /// Halves the window (keeping the overlap factor and FFT size) until it spans at most two thirds of `len` samples.
    pub fn fit(&self, len: usize) -> Self {
        let factor = (self.window / self.hop.max(1)).max(2);
        let mut window = self.window;
        while 3 * window > 2 * len && window / 2 >= factor {
            window /= 2;
        }
        Self { window, hop: (window / factor).max(1), fft_size: self.fft_size }
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Magnitudes, frames × bins.
    pub m: Vec<Vec<f64>>,
    /// Phases in radians, frames × bins.
    pub phi: Vec<Vec<f64>>,
    pub freqs: Vec<f64>,
    pub config: StftConfig,
    pub sample_rate: f64,
    /// Original series length.
    pub len: usize,
    pad_left: usize,
    pad_right: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.m.len()
    }

    pub fn bins(&self) -> usize {
        self.freqs.len()
    }

    /// Temporal mean magnitude per bin.
    pub fn mean_magnitude(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins()];
        for row in &self.m {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let f = self.frames().max(1) as f64;
        out.iter_mut().for_each(|v| *v /= f);
        out
    }

    /// Σ |X|² / fft_size over all frames, counting mirrored bins of the one-sided spectrum.
    pub fn spectral_energy(&self) -> f64 {
        let n = self.config.fft_size;
        let mut e = 0.0;
        for row in &self.m {
            for (k, v) in row.iter().enumerate() {
                let w = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
                e += w * v * v;
            }
        }
        e / n as f64
    }

    /// Σ over frames of the energy of each windowed frame of `x` (the time side of Parseval).
    pub fn windowed_energy(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.len {
            return Err(Error::ShapeMismatch(format!("series has {} samples, spectrogram {}", x.len(), self.len)));
        }
        let padded = reflect_pad(x, self.pad_left, self.pad_right);
        let w = dsp::hann_periodic(self.config.window);
        Ok((0..self.frames())
            .map(|f| {
                let s = f * self.config.hop;
                padded[s..s + self.config.window].iter().zip(&w).map(|(v, wi)| (v * wi).powi(2)).sum::<f64>()
            })
            .sum())
    }

    /// Same geometry and phases, new magnitudes.
    pub fn with_magnitudes(&self, m: Vec<Vec<f64>>) -> Self {
        Self { m, ..self.clone() }
    }
}

fn reflect_pad(x: &[f64], left: usize, right: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + left + right);
    out.extend((1..=left).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=right).map(|i| x[n - 1 - i]));
    out
}

pub fn stft(x: &[f64], sample_rate: f64, config: &StftConfig) -> Result<Spectrogram> {
    config.validate()?;
    ensure_finite(x, "STFT input")?;
    let n = x.len();
    if n < config.window {
        return Err(Error::TooShort { needed: config.window, got: n });
    }
    let (win, hop, nfft) = (config.window, config.hop, config.fft_size);
    let pad_left = win - hop;
    let body = pad_left + n;
    let frames = (body + hop - 1) / hop;
    let pad_right = frames * hop + win - hop - body;
    if pad_left >= n || pad_right >= n {
        return Err(Error::TooShort { needed: pad_left.max(pad_right) + 1, got: n });
    }
    let padded = reflect_pad(x, pad_left, pad_right);
    let w = dsp::hann_periodic(win);
    let nb = config.n_bins();
    let mut m = Vec::with_capacity(frames);
    let mut phi = Vec::with_capacity(frames);
    for f in 0..frames {
        let s = f * hop;
        let frame: Vec<f64> = padded[s..s + win].iter().zip(&w).map(|(v, wi)| v * wi).collect();
        let spec = dsp::fft_real_padded(&frame, nfft);
        m.push(spec[..nb].iter().map(|c| c.norm()).collect());
        phi.push(spec[..nb].iter().map(|c| c.arg()).collect());
    }
    let freqs = (0..nb).map(|k| k as f64 * sample_rate / nfft as f64).collect();
    Ok(Spectrogram { m, phi, freqs, config: *config, sample_rate, len: n, pad_left, pad_right })
}

pub fn istft(spec: &Spectrogram) -> Vec<f64> {
    let StftConfig { window: win, hop, fft_size: nfft } = spec.config;
    let total = spec.pad_left + spec.len + spec.pad_right;
    let w = dsp::hann_periodic(win);
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let nb = spec.bins();
    for (f, (mrow, prow)) in spec.m.iter().zip(&spec.phi).enumerate() {
        let mut full = vec![Complex64::new(0.0, 0.0); nfft];
        for k in 0..nb {
            let c = Complex64::from_polar(mrow[k], prow[k]);
            full[k] = c;
            if k > 0 && k < nfft - k {
                full[nfft - k] = c.conj();
            }
        }
        full[0].im = 0.0;
        if nfft % 2 == 0 {
            full[nfft / 2].im = 0.0;
        }
        let frame = dsp::ifft_real(&full);
        let s = f * hop;
        for i in 0..win {
            acc[s + i] += frame[i] * w[i];
            norm[s + i] += w[i] * w[i];
        }
    }
    (spec.pad_left..spec.pad_left + spec.len)
        .map(|i| if norm[i] > 1e-12 { acc[i] / norm[i] } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn zero_in_zero_out() {
        let s = stft(&[0.0; 400], 20.0, &StftConfig::default()).unwrap();
        assert!(s.m.iter().flatten().all(|&v| v == 0.0));
        assert!(istft(&s).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tone_peak_bin() {
        let s = stft(&tone(0.25, 1200, 20.0), 20.0, &StftConfig::default()).unwrap();
        let mb = s.mean_magnitude();
        let k = (0..mb.len()).max_by(|&a, &b| mb[a].total_cmp(&mb[b])).unwrap();
        let df = 20.0 / 1024.0;
        assert!((s.freqs[k] - 0.25).abs() <= df + 1e-12, "{}", s.freqs[k]);
    }

    #[test]
    fn round_trip_and_parseval() {
        let x: Vec<f64> = (0..400).map(|i| (i as f64 * 0.31).sin() + 0.2 * (i as f64 * 1.7).cos() + 0.01 * i as f64).collect();
        let s = stft(&x, 20.0, &StftConfig::default()).unwrap();
        assert!(dsp::rel_l2_error(&istft(&s), &x) < 1e-10);
        let te = s.windowed_energy(&x).unwrap();
        assert!((te - s.spectral_energy()).abs() / te < 1e-9);
    }

    #[test]
    fn fit_shrinks_for_short_series() {
        let c = StftConfig::default().fit(200);
        assert_eq!((c.window, c.hop, c.fft_size), (128, 32, 1024));
        assert_eq!(StftConfig::default().fit(300).window, 128);
        assert_eq!(StftConfig::default().fit(400).window, 256);
        let x = tone(0.3, 200, 20.0);
        let s = stft(&x, 20.0, &c).unwrap();
        assert!(dsp::rel_l2_error(&istft(&s), &x) < 1e-10);
        assert_eq!(StftConfig::default().fit(5000), StftConfig::default());
    }

    #[test]
    fn rejects_bad_config_and_short_input() {
        assert!(stft(&[0.0; 100], 20.0, &StftConfig::default()).is_err());
        assert!(StftConfig { window: 256, hop: 256, fft_size: 1024 }.validate().is_err());
        assert!(StftConfig { window: 256, hop: 48, fft_size: 1024 }.validate().is_err());
        assert!(StftConfig { window: 2048, hop: 512, fft_size: 1024 }.validate().is_err());
    }
}
