//! Flexible perturbation encryptor.
//!
//! Out-of-band residue `x_ot` receives key-controlled spectral noise scaled to
//! its own band power; the personal-difference component `x_pd` has its
//! analytic phase rotated by a key-controlled Gaussian-bump function. The
//! universal respiratory component passes through untouched.

pub mod dtw;
pub mod key;
pub mod noise;
pub mod phase;

use num_bigint::BigUint;
use num_complex::Complex64;
use num_traits::One;
use serde::{Deserialize, Serialize};

pub use dtw::dtw_distance;
pub use key::{derive_seed, EncryptionKey};
pub use noise::{adaptive_intensity, apply_amp_perturbation, gen_amp_noise, remove_amp_perturbation};
pub use phase::{
    apply_phase_perturbation, envelope, hilbert_analytic, inst_freq_deviation, phase_perturbation_fn,
    phase_window, remove_phase_perturbation,
};

use crate::afd::DecomposedSignal;
use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::RESP_BAND;

pub const T_RES_BOUNDS: (f64, f64) = (2.0, 10.0);
pub const DEFAULT_EPSILON_MARGIN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationParams {
    pub beta_amp: f64,
    pub beta_phase: f64,
    pub epsilon_margin: usize,
    /// Envelope-DTW lower bound a segment should reach to count as distorted.
    pub delta_a: f64,
}

impl Default for PerturbationParams {
    fn default() -> Self {
        Self { beta_amp: 1.0, beta_phase: 1.0, epsilon_margin: DEFAULT_EPSILON_MARGIN, delta_a: 1.0 }
    }
}

impl PerturbationParams {
    pub fn off() -> Self {
        Self { beta_amp: 0.0, beta_phase: 0.0, ..Self::default() }
    }

    pub fn validate(&self, key_len: usize) -> Result<()> {
        if !(self.beta_amp >= 0.0 && self.beta_phase >= 0.0) || !self.beta_amp.is_finite() || !self.beta_phase.is_finite() {
            return Err(invalid("perturbation weights must be finite and non-negative"));
        }
        if self.epsilon_margin >= key_len {
            return Err(invalid(format!("security margin {} must be below key length {key_len}", self.epsilon_margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedSegment {
    /// `x_ure + Re(x_enc,a) + x_ot,enc`.
    pub y: Vec<f64>,
    pub x_ure: Vec<f64>,
    pub analytic_enc: Vec<Complex64>,
    pub x_ot_enc: Vec<f64>,
    pub key_fingerprint: String,
    pub key_len: usize,
    pub epsilon_margin: usize,
    pub dtw_score: f64,
    pub gamma_f: f64,
    pub alpha_f: f64,
    pub t_res: f64,
    pub sample_rate: f64,
}

impl EncryptedSegment {
    pub fn meets_distortion_bound(&self, delta_a: f64) -> bool {
        self.dtw_score >= delta_a
    }
}

/// Respiratory period from the in-band spectral peak of `x_ure`, clamped to [2 s, 10 s].
pub fn estimate_t_res(x_ure: &[f64], sample_rate: f64) -> f64 {
    let n = x_ure.len();
    if n == 0 {
        return T_RES_BOUNDS.1;
    }
    let nfft = dsp::next_pow2(8 * n);
    let spec = dsp::fft_real_padded(x_ure, nfft);
    let mut best = (0usize, 0.0f64);
    for (k, c) in spec.iter().enumerate().take(nfft / 2 + 1) {
        if dsp::bin_in_band(k, nfft, sample_rate, RESP_BAND) && c.norm() > best.1 {
            best = (k, c.norm());
        }
    }
    if best.1 == 0.0 {
        return T_RES_BOUNDS.1;
    }
    let f = best.0 as f64 * sample_rate / nfft as f64;
    (1.0 / f).clamp(T_RES_BOUNDS.0, T_RES_BOUNDS.1)
}

pub fn encrypt_segment(
    d: &DecomposedSignal,
    key: &EncryptionKey,
    params: &PerturbationParams,
    t_res: f64,
    sample_rate: f64,
) -> Result<EncryptedSegment> {
    params.validate(key.len())?;
    if !(t_res > 0.0) {
        return Err(invalid("T_res must be positive"));
    }
    let n = d.len();
    if d.x_pd.len() != n || d.x_ot.len() != n {
        return Err(Error::ShapeMismatch("decomposition components differ in length".into()));
    }
    let ph = apply_phase_perturbation(&d.x_pd, key, params.beta_phase, t_res, sample_rate, RESP_BAND)?;
    let (x_ot_enc, alpha_f) = apply_amp_perturbation(&d.x_ot, key, params.beta_amp, RESP_BAND, sample_rate)?;
    let y: Vec<f64> = (0..n).map(|i| d.x_ure[i] + ph.x_enc[i] + x_ot_enc[i]).collect();

    let dtw_score = if ph.gamma_f == 0.0 {
        0.0
    } else {
        let x_re = d.x_re();
        let enc_re = dsp::add(&d.x_ure, &ph.x_enc);
        dtw_distance(&envelope(&enc_re)?, &envelope(&x_re)?)
    };
    Ok(EncryptedSegment {
        y,
        x_ure: d.x_ure.clone(),
        analytic_enc: ph.analytic_enc,
        x_ot_enc,
        key_fingerprint: key.fingerprint(),
        key_len: key.len(),
        epsilon_margin: params.epsilon_margin,
        dtw_score,
        gamma_f: ph.gamma_f,
        alpha_f,
        t_res,
        sample_rate,
    })
}

/// Inverts [`encrypt_segment`] with a candidate key. Only the true key recovers
/// the components; VMD modes are not part of the ciphertext and come back empty.
pub fn decrypt_segment(enc: &EncryptedSegment, key: &EncryptionKey) -> Result<DecomposedSignal> {
    let n = enc.y.len();
    if enc.x_ure.len() != n || enc.analytic_enc.len() != n || enc.x_ot_enc.len() != n {
        return Err(Error::ShapeMismatch("encrypted components differ in length".into()));
    }
    if key.len() != enc.key_len {
        return Err(Error::ShapeMismatch(format!("key has {} bits, ciphertext expects {}", key.len(), enc.key_len)));
    }
    let pd_a = remove_phase_perturbation(&enc.analytic_enc, key, enc.gamma_f, enc.t_res, enc.sample_rate);
    let x_pd = pd_a.iter().map(|c| c.re).collect();
    let x_ot = remove_amp_perturbation(&enc.x_ot_enc, key, enc.alpha_f, RESP_BAND, enc.sample_rate);
    Ok(DecomposedSignal {
        x_ure: enc.x_ure.clone(),
        x_pd,
        x_ot,
        modes: Vec::new(),
        mean: 0.0,
        vmd_converged: true,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrreversibilityBudget {
    pub budget_bits: usize,
    pub brute_force_attempts: BigUint,
}

/// `H(k) − ε` bits and `2^(H(k) − ε)` brute-force attempts for an `L`-bit key.
pub fn irreversibility_budget(key_len: usize, epsilon_margin: usize) -> Result<IrreversibilityBudget> {
    if epsilon_margin >= key_len {
        return Err(invalid(format!("security margin {epsilon_margin} must be below key length {key_len}")));
    }
    let bits = key_len - epsilon_margin;
    Ok(IrreversibilityBudget { budget_bits: bits, brute_force_attempts: BigUint::one() << bits })
}
