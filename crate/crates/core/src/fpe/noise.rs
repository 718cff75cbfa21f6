//! Key-controlled sine-cosine noise and out-of-band amplitude perturbation.
//!
//! The noise for bin `n` is `α·sin(Γω₁(n+1))·cos(Γω₂(n+1))` with ω₁ the golden
//! ratio and ω₂ = √2. Arguments are reduced modulo 2π in exact fixed-point
//! (turns as 128-bit fractions), so keys longer than 53 bits stay distinguishable.

use std::f64::consts::TAU;

use num_bigint::{BigInt, BigUint};
use num_complex::Complex64;
use num_traits::{One, Zero};
use once_cell::sync::Lazy;

use super::key::{derive_seed, EncryptionKey};
use crate::dsp;
use crate::error::{Error, Result};

const FRAC_BITS: u64 = 384;

/// ω/(2π) as fixed-point fractions with `FRAC_BITS` bits.
static TURNS: Lazy<(BigUint, BigUint)> = Lazy::new(|| {
    let one = BigUint::one() << FRAC_BITS;
    let pi = machin_pi(FRAC_BITS);
    let sqrt5 = (BigUint::from(5u32) << (2 * FRAC_BITS)).sqrt();
    let golden = (&one + sqrt5) >> 1u32;
    let sqrt2 = (BigUint::from(2u32) << (2 * FRAC_BITS)).sqrt();
    let two_pi = pi << 1u32;
    ((golden << FRAC_BITS) / &two_pi, (sqrt2 << FRAC_BITS) / two_pi)
});

fn arctan_inv(x: u32, bits: u64) -> BigInt {
    let one = BigInt::one() << (bits + 32);
    let x2 = BigInt::from(x) * BigInt::from(x);
    let mut term = &one / BigInt::from(x);
    let mut sum = BigInt::zero();
    let mut k = 0u32;
    while !term.is_zero() {
        let t = &term / BigInt::from(2 * k + 1);
        if k % 2 == 0 {
            sum += t;
        } else {
            sum -= t;
        }
        term /= &x2;
        k += 1;
    }
    sum >> 32u32
}

fn machin_pi(bits: u64) -> BigUint {
    let pi: BigInt = arctan_inv(5, bits) * 16 - arctan_inv(239, bits) * 4;
    pi.to_biguint().expect("pi is positive")
}

/// Per-key noise generator: the fractional turns of `Γω₁/2π` and `Γω₂/2π`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedNoise {
    turn1: u128,
    turn2: u128,
}

impl KeyedNoise {
    pub fn from_seed(seed: &BigUint) -> Self {
        let (c1, c2) = &*TURNS;
        let mask = (BigUint::one() << FRAC_BITS) - 1u32;
        let top = |c: &BigUint| -> u128 {
            let f: BigUint = (seed * c) & &mask;
            let digits = (f >> (FRAC_BITS - 128)).to_u64_digits();
            digits.iter().take(2).enumerate().fold(0u128, |acc, (i, &d)| acc | ((d as u128) << (64 * i)))
        };
        Self { turn1: top(c1), turn2: top(c2) }
    }

    fn angle(turn: u128, m: u128) -> f64 {
        let frac = turn.wrapping_mul(m);
        (frac >> 75) as f64 / (1u64 << 53) as f64 * TAU
    }

    /// Unit-intensity noise for `n_bins` bins.
    pub fn unit(&self, n_bins: usize) -> Vec<f64> {
        (0..n_bins)
            .map(|n| {
                let m = n as u128 + 1;
                Self::angle(self.turn1, m).sin() * Self::angle(self.turn2, m).cos()
            })
            .collect()
    }
}

pub fn gen_amp_noise(seed: &BigUint, n_bins: usize, alpha_f: f64) -> Vec<f64> {
    KeyedNoise::from_seed(seed).unit(n_bins).into_iter().map(|v| alpha_f * v).collect()
}

/// `β · sqrt(mean |X(f)|²)` over the given band spectrum.
pub fn adaptive_intensity(band_spectrum: &[Complex64], beta: f64) -> Result<f64> {
    if band_spectrum.is_empty() {
        return Err(Error::Empty("band spectrum"));
    }
    let p = band_spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>() / band_spectrum.len() as f64;
    Ok(beta * p.sqrt())
}

/// Seeds for the real- and imaginary-part noise streams: `Γ` and `Γ + 2^L`.
pub fn stream_seeds(key: &EncryptionKey) -> (BigUint, BigUint) {
    let g = derive_seed(key);
    let im = &g + (BigUint::one() << key.len());
    (g, im)
}

/// Positive-frequency bins (0..=N/2) whose frequency lies outside `band`.
pub fn out_of_band_bins(n: usize, fs: f64, band: (f64, f64)) -> Vec<usize> {
    (0..=n / 2).filter(|&k| !dsp::bin_in_band(k, n, fs, band)).collect()
}

fn add_keyed_noise(spec: &mut [Complex64], bins: &[usize], key: &EncryptionKey, alpha: f64, sign: f64) {
    let n = spec.len();
    let (s_re, s_im) = stream_seeds(key);
    let re = KeyedNoise::from_seed(&s_re).unit(bins.len());
    let im = KeyedNoise::from_seed(&s_im).unit(bins.len());
    for (i, &k) in bins.iter().enumerate() {
        let self_conj = k == 0 || 2 * k == n;
        let delta = if self_conj {
            Complex64::new(sign * alpha * re[i], 0.0)
        } else {
            Complex64::new(sign * alpha * re[i], sign * alpha * im[i])
        };
        spec[k] += delta;
        if !self_conj {
            spec[n - k] += delta.conj();
        }
    }
}

/// Adds keyed noise to every out-of-band bin of `x_ot`; returns the perturbed
/// series and the intensity α_f used.
pub fn apply_amp_perturbation(
    x_ot: &[f64],
    key: &EncryptionKey,
    beta_amp: f64,
    resp_band: (f64, f64),
    sample_rate: f64,
) -> Result<(Vec<f64>, f64)> {
    crate::error::ensure_finite(x_ot, "x_ot")?;
    let n = x_ot.len();
    let mut spec = dsp::fft_real(x_ot);
    let bins = out_of_band_bins(n, sample_rate, resp_band);
    let band: Vec<Complex64> = bins.iter().map(|&k| spec[k]).collect();
    let alpha = adaptive_intensity(&band, beta_amp)?;
    if alpha == 0.0 {
        return Ok((x_ot.to_vec(), 0.0));
    }
    add_keyed_noise(&mut spec, &bins, key, alpha, 1.0);
    Ok((dsp::ifft_real(&spec), alpha))
}

/// Removes the keyed noise added by [`apply_amp_perturbation`] given α_f.
pub fn remove_amp_perturbation(
    x_enc: &[f64],
    key: &EncryptionKey,
    alpha_f: f64,
    resp_band: (f64, f64),
    sample_rate: f64,
) -> Vec<f64> {
    if alpha_f == 0.0 {
        return x_enc.to_vec();
    }
    let n = x_enc.len();
    let mut spec = dsp::fft_real(x_enc);
    let bins = out_of_band_bins(n, sample_rate, resp_band);
    add_keyed_noise(&mut spec, &bins, key, alpha_f, -1.0);
    dsp::ifft_real(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_noise(seed: f64, n: usize) -> f64 {
        let golden = (1.0 + 5f64.sqrt()) / 2.0;
        let m = n as f64 + 1.0;
        (seed * golden * m).sin() * (seed * 2f64.sqrt() * m).cos()
    }

    #[test]
    fn fixed_point_matches_direct_formula_for_small_seeds() {
        for &s in &[1u64, 129, 255, 40_000, 65_535] {
            let fast = gen_amp_noise(&BigUint::from(s), 64, 1.0);
            for (n, v) in fast.iter().enumerate() {
                assert!((v - direct_noise(s as f64, n)).abs() < 1e-7, "seed {s} bin {n}");
            }
        }
    }

    #[test]
    fn zero_alpha_and_bound() {
        assert!(gen_amp_noise(&BigUint::from(77u32), 32, 0.0).iter().all(|&v| v == 0.0));
        let a = 3.0;
        assert!(gen_amp_noise(&BigUint::from(12345u32), 512, a).iter().all(|v| v.abs() <= a + 1e-12));
    }

    #[test]
    fn high_bits_of_long_keys_matter() {
        let k = EncryptionKey::random(128, 4).unwrap();
        let a = gen_amp_noise(&derive_seed(&k), 16, 1.0);
        let b = gen_amp_noise(&derive_seed(&k.with_bit_flipped(0)), 16, 1.0);
        assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    }

    #[test]
    fn intensity_examples() {
        assert_eq!(adaptive_intensity(&[Complex64::new(0.0, 0.0); 5], 3.0).unwrap(), 0.0);
        let band = vec![Complex64::from_polar(2.0, 0.7); 9];
        assert!((adaptive_intensity(&band, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((adaptive_intensity(&band, 2.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(adaptive_intensity(&[], 1.0).is_err());
    }
}
