//! Shared FFT and vector helpers.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place forward FFT (unnormalized).
pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(buf.len()).process(buf));
}

/// In-place inverse FFT, scaled by 1/N so that `ifft(fft(x)) == x`.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(buf.len()).process(buf));
    let s = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= s);
}

pub fn fft_real(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut buf);
    buf
}

/// Zero-padded forward FFT of a real series to length `n` (`n >= x.len()`).
pub fn fft_real_padded(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n.max(x.len())];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    fft_in_place(&mut buf);
    buf
}

/// Real part of the inverse FFT.
pub fn ifft_real(spec: &[Complex64]) -> Vec<f64> {
    let mut buf = spec.to_vec();
    ifft_in_place(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// Signed frequency (Hz) of DFT bin `k` for length `n`.
pub fn bin_freq(k: usize, n: usize, fs: f64) -> f64 {
    let k = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    k * fs / n as f64
}

/// True when the absolute frequency of bin `k` lies in `[lo, hi]`.
pub fn bin_in_band(k: usize, n: usize, fs: f64, band: (f64, f64)) -> bool {
    let f = bin_freq(k, n, fs).abs();
    f >= band.0 && f <= band.1
}

pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Periodic Hann window, the variant that overlap-adds to a constant.
pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (energy(x) / x.len() as f64).sqrt()
    }
}

pub fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn demean(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

/// ‖a − b‖₂ / ‖b‖₂, or the absolute norm when `b` is zero.
pub fn rel_l2_error(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den = energy(b).sqrt();
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Energy of `x` inside `band` measured on its DFT (two-sided, Parseval-scaled).
pub fn band_energy(x: &[f64], fs: f64, band: (f64, f64)) -> f64 {
    let n = x.len();
    let spec = fft_real(x);
    spec.iter()
        .enumerate()
        .filter(|(k, _)| bin_in_band(*k, n, fs, band))
        .map(|(_, c)| c.norm_sqr())
        .sum::<f64>()
        / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft_round_trip() {
        let x: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin() + 0.1 * i as f64).collect();
        let y = ifft_real(&fft_real(&x));
        assert!(rel_l2_error(&y, &x) < 1e-13);
    }

    #[test]
    fn bin_freq_wraps_negative() {
        assert_eq!(bin_freq(0, 8, 8.0), 0.0);
        assert_eq!(bin_freq(4, 8, 8.0), 4.0);
        assert_eq!(bin_freq(5, 8, 8.0), -3.0);
    }

    #[test]
    fn band_energy_matches_time_energy_for_full_band() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
        let e = band_energy(&x, 1.0, (0.0, 0.5));
        assert!((e - energy(&x)).abs() < 1e-9 * energy(&x));
    }

    #[test]
    fn periodic_hann_overlap_adds_to_constant() {
        let w = hann_periodic(16);
        for i in 0..4 {
            let s: f64 = (0..4).map(|j| w[i + 4 * j]).sum();
            assert!((s - 2.0).abs() < 1e-12);
        }
    }
}
