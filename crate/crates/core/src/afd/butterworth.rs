//! Butterworth band-pass design as second-order sections and zero-phase filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// One biquad `b0 + b1 z⁻¹ + b2 z⁻²` over `1 + a1 z⁻¹ + a2 z⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Steady-state transposed-direct-form-II state for a constant input `u`.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let z2 = self.b[2] * u - self.a[2] * y;
        let z1 = y - self.b[0] * u;
        [z1, z2]
    }

    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
    pub fs: f64,
}

impl BandPass {
    /// Digital Butterworth band-pass of prototype order `order` (2·order poles),
    /// via bilinear transform with pre-warped band edges.
    pub fn design(low: f64, high: f64, order: usize, fs: f64) -> Result<Self> {
        if !(fs > 0.0 && 0.0 < low && low < high && high < fs / 2.0) {
            return Err(invalid(format!("band edges must satisfy 0 < {low} < {high} < {}", fs / 2.0)));
        }
        if order == 0 {
            return Err(invalid("filter order must be at least 1"));
        }
        let k2 = 2.0 * fs;
        let w1 = k2 * (PI * low / fs).tan();
        let w2 = k2 * (PI * high / fs).tan();
        let bw = w2 - w1;
        let w0sq = w1 * w2;

        // Analog band-pass poles, one representative per conjugate pair.
        let mut analog: Vec<(Complex64, Complex64)> = Vec::new();
        let mut all_poles: Vec<Complex64> = Vec::new();
        for k in 0..order {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            let p = Complex64::from_polar(1.0, theta);
            let half = p * (bw / 2.0);
            let disc = (half * half - w0sq).sqrt();
            let (s1, s2) = (half + disc, half - disc);
            all_poles.push(s1);
            all_poles.push(s2);
            if p.im > 1e-12 {
                analog.push((s1, s1.conj()));
                analog.push((s2, s2.conj()));
            } else if p.im.abs() <= 1e-12 {
                analog.push((s1, s2));
            }
        }

        // Gain after the bilinear map: bw^n · (2fs)^n / Π(2fs − p), zeros at z = ±1.
        let mut gain = Complex64::new(bw.powi(order as i32), 0.0) * Complex64::new(k2.powi(order as i32), 0.0);
        for p in &all_poles {
            gain /= Complex64::new(k2, 0.0) - p;
        }
        let gain = gain.re;

        let bilinear = |s: Complex64| (Complex64::new(k2, 0.0) + s) / (Complex64::new(k2, 0.0) - s);
        let sections = analog
            .into_iter()
            .enumerate()
            .map(|(i, (pa, pb))| {
                let (za, zb) = (bilinear(pa), bilinear(pb));
                let g = if i == 0 { gain } else { 1.0 };
                Biquad { b: [g, 0.0, -g], a: [1.0, -(za + zb).re, (za * zb).re] }
            })
            .collect();
        Ok(Self { sections, fs })
    }

    pub fn response(&self, f: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(f, self.fs)).product()
    }

    /// Causal filtering with every section started from the steady state of `x0`.
    fn filter_from(&self, x: &[f64], x0: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut level = x0;
        for s in &self.sections {
            let mut z = s.steady_state(level);
            level *= s.dc_gain();
            for v in y.iter_mut() {
                let inp = *v;
                let out = s.b[0] * inp + z[0];
                z[0] = s.b[1] * inp - s.a[1] * out + z[1];
                z[1] = s.b[2] * inp - s.a[2] * out;
                *v = out;
            }
        }
        y
    }

    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        self.filter_from(x, 0.0)
    }

    /// Forward-backward filtering with odd-symmetric edge extension.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = self.pad_len().min(n.saturating_sub(1));
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        let fwd = self.filter_from(&ext, ext[0]);
        let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
        let start = rev[0];
        rev = self.filter_from(&rev, start);
        rev.reverse();
        rev[pad..pad + n].to_vec()
    }

    /// Edge extension long enough to cover the low-edge ringing (about one low-cutoff period).
    fn pad_len(&self) -> usize {
        let base = 3 * (2 * self.sections.len() + 1);
        base.max(self.sections.len() * 40)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_gain_at_band_centre_and_rejection_outside() {
        let bp = BandPass::design(0.1, 0.5, 4, 20.0).unwrap();
        assert_eq!(bp.sections.len(), 4);
        // Digital centre frequency from the pre-warped edges.
        let w1 = (PI * 0.1 / 20.0).tan();
        let w2 = (PI * 0.5 / 20.0).tan();
        let fc = 20.0 / PI * (w1 * w2).sqrt().atan();
        assert!((bp.response(fc).norm() - 1.0).abs() < 1e-9);
        // -3 dB at both edges.
        assert!((bp.response(0.1).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((bp.response(0.5).norm() - 0.5f64.sqrt()).abs() < 1e-9);
        assert!(bp.response(1.2).norm() < 0.02);
        assert!(bp.response(0.0).norm() < 1e-12);
    }

    #[test]
    fn odd_order_design() {
        let bp = BandPass::design(0.1, 0.5, 3, 20.0).unwrap();
        assert_eq!(bp.sections.len(), 3);
        assert!((bp.response(0.5).norm() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(BandPass::design(0.5, 0.1, 4, 20.0).is_err());
        assert!(BandPass::design(0.0, 0.5, 4, 20.0).is_err());
        assert!(BandPass::design(0.1, 10.0, 4, 20.0).is_err());
    }
}
