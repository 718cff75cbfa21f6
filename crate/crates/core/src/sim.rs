//! Synthetic FMCW radar scenes of a breathing subject.
//!
//! Chest motion is a persona-specific respiratory waveform (fundamental plus
//! harmonics on an inhale/exhale time-warped cycle phase), a heartbeat sinusoid
//! and Gaussian micromotion. Every chirp of a frame sees the same range and
//! carries a beat tone at `R / range_resolution` bins with carrier phase
//! `4πR/λ`.

use std::f64::consts::PI;

use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Size of the default cohort.
pub const COHORT_SIZE: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub start_frequency: f64,
    pub bandwidth: f64,
    pub samples_per_chirp: usize,
    pub chirps_per_frame: usize,
    pub frame_period: f64,
    pub chirp_cycle_time: f64,
    pub adc_rate: f64,
}

impl Default for RadarConfig {
    /// AWR1843 capture profile: 77 GHz start, 4 GHz sweep, 256 samples x 128 chirps, 50 ms frames.
    fn default() -> Self {
        Self {
            start_frequency: 77e9,
            bandwidth: 4e9,
            samples_per_chirp: 256,
            chirps_per_frame: 128,
            frame_period: 0.05,
            chirp_cycle_time: 50e-6,
            adc_rate: 8e6,
        }
    }
}

impl RadarConfig {
    /// Reduced cube (64 samples, 2 chirps) with the same carrier, sweep and
    /// frame rate. Used for long cohorts where the full cube would be gigabytes.
    pub fn desk() -> Self {
        Self { samples_per_chirp: 64, chirps_per_frame: 2, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.start_frequency,
            self.bandwidth,
            self.frame_period,
            self.chirp_cycle_time,
            self.adc_rate,
        ];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(invalid("radar config values must be finite and positive"));
        }
        if self.samples_per_chirp < 2 || self.chirps_per_frame < 1 {
            return Err(invalid("need samples_per_chirp >= 2 and chirps_per_frame >= 1"));
        }
        Ok(())
    }

    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    pub fn slow_time_rate(&self) -> f64 {
        1.0 / self.frame_period
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.start_frequency
    }

    pub fn max_range(&self) -> f64 {
        self.samples_per_chirp as f64 * self.range_resolution()
    }
}

/// One harmonic of the respiratory waveform, relative to the fundamental.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: u32,
    pub ratio: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaProfile {
    pub id_label: u32,
    /// Hz, within 0.1..=0.5.
    pub resp_rate: f64,
    /// Meters.
    pub resp_amplitude: f64,
    pub harmonic_coeffs: Vec<Harmonic>,
    pub inhale_exhale_ratio: f64,
    /// Hz, within 0.8..=2.0.
    pub heart_rate: f64,
    pub heart_amplitude: f64,
    pub micromotion_std: f64,
    pub base_range: f64,
    /// Per-cycle uniform rate jitter, as a fraction of `resp_rate`.
    #[serde(default)]
    pub rate_jitter: f64,
    /// Per-cycle uniform amplitude jitter, as a fraction of `resp_amplitude`.
    #[serde(default)]
    pub amplitude_jitter: f64,
    /// Standard deviation of slow rate drift (fraction), correlation time [`DRIFT_TAU_S`].
    #[serde(default)]
    pub rate_drift: f64,
}

/// Correlation time of the slow breathing-rate drift.
pub const DRIFT_TAU_S: f64 = 90.0;

impl PersonaProfile {
    /// A sinusoidal breather with every other source switched off.
    pub fn pure(id_label: u32, resp_rate: f64, resp_amplitude: f64) -> Self {
        Self {
            id_label,
            resp_rate,
            resp_amplitude,
            harmonic_coeffs: Vec::new(),
            inhale_exhale_ratio: 1.0,
            heart_rate: 1.2,
            heart_amplitude: 0.0,
            micromotion_std: 0.0,
            base_range: 0.5,
            rate_jitter: 0.0,
            amplitude_jitter: 0.0,
            rate_drift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut vals = vec![
            self.resp_rate,
            self.resp_amplitude,
            self.inhale_exhale_ratio,
            self.heart_rate,
            self.heart_amplitude,
            self.micromotion_std,
            self.base_range,
            self.rate_jitter,
            self.amplitude_jitter,
            self.rate_drift,
        ];
        for h in &self.harmonic_coeffs {
            vals.push(h.ratio);
            vals.push(h.phase);
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("persona"));
        }
        if !(0.1..=0.5).contains(&self.resp_rate) {
            return Err(invalid(format!("resp_rate {} outside 0.1..=0.5 Hz", self.resp_rate)));
        }
        if !(0.8..=2.0).contains(&self.heart_rate) {
            return Err(invalid(format!("heart_rate {} outside 0.8..=2.0 Hz", self.heart_rate)));
        }
        if self.resp_amplitude < 0.0
            || self.heart_amplitude < 0.0
            || self.micromotion_std < 0.0
            || self.harmonic_coeffs.iter().any(|h| h.ratio < 0.0)
        {
            return Err(invalid("amplitudes must be non-negative"));
        }
        if self.inhale_exhale_ratio <= 0.0 {
            return Err(invalid("inhale_exhale_ratio must be positive"));
        }
        if !(0.0..0.5).contains(&self.rate_jitter) || !(0.0..1.0).contains(&self.amplitude_jitter) {
            return Err(invalid("jitter fractions out of range"));
        }
        Ok(())
    }

    /// Respiratory waveform at cycle phase `theta` in [0, 1), unit fundamental amplitude.
    ///
    /// The cycle starts at end-exhale; inhalation occupies `r / (1 + r)` of the cycle.
    pub fn waveform(&self, theta: f64) -> f64 {
        let rho = self.inhale_exhale_ratio / (1.0 + self.inhale_exhale_ratio);
        let warped = if theta < rho {
            0.5 * theta / rho
        } else {
            0.5 + 0.5 * (theta - rho) / (1.0 - rho)
        };
        let mut v = -(2.0 * PI * warped).cos();
        for h in &self.harmonic_coeffs {
            v += h.ratio * (2.0 * PI * h.order as f64 * warped + h.phase).cos();
        }
        v
    }
}

/// Chest displacement relative to `base_range`, with the instantaneous breathing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displacement {
    pub samples: Vec<f64>,
    pub resp_rate_hz: Vec<f64>,
    pub sample_rate: f64,
    pub base_range: f64,
    pub id_label: Option<u32>,
}

impl Displacement {
    /// A target parked at `range` for `n` slow-time samples.
    pub fn stationary(range: f64, n: usize, sample_rate: f64) -> Self {
        Self {
            samples: vec![0.0; n],
            resp_rate_hz: vec![0.0; n],
            sample_rate,
            base_range: range,
            id_label: None,
        }
    }

    pub fn range_at(&self, i: usize) -> f64 {
        self.base_range + self.samples[i]
    }
}

pub fn synth_displacement(
    persona: &PersonaProfile,
    duration: f64,
    slow_rate: f64,
    seed: u64,
) -> Result<Displacement> {
    persona.validate()?;
    if !(slow_rate.is_finite() && slow_rate > 0.0) {
        return Err(invalid("slow_rate must be positive"));
    }
    if !(duration.is_finite() && duration >= 1.0 / persona.resp_rate) {
        return Err(invalid(format!(
            "duration {duration} s shorter than one respiratory period ({} s)",
            1.0 / persona.resp_rate
        )));
    }
    let n = (duration * slow_rate).round() as usize;
    let dt = 1.0 / slow_rate;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per-cycle jitter draws, generated up front so their sequence does not
    // depend on the noise draws below.
    let max_cycles = (duration * persona.resp_rate * 2.0).ceil() as usize + 8;
    let cycle_rate: Vec<f64> = (0..max_cycles)
        .map(|_| 1.0 + persona.rate_jitter * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let cycle_amp: Vec<f64> = (0..max_cycles)
        .map(|_| 1.0 + persona.amplitude_jitter * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    let start_phase: f64 = rng.random();
    let heart_phase = 2.0 * PI * rng.random::<f64>();

    let decay = (-dt / DRIFT_TAU_S).exp();
    let innov = persona.rate_drift * (1.0 - decay * decay).sqrt();
    let mut drift = persona.rate_drift * rng.sample::<f64, _>(StandardNormal);

    let micro = Normal::new(0.0, persona.micromotion_std.max(0.0))
        .map_err(|e| invalid(e.to_string()))?;

    let mut samples = Vec::with_capacity(n);
    let mut rates = Vec::with_capacity(n);
    let mut psi = start_phase;
    for i in 0..n {
        let t = i as f64 * dt;
        let cycle = (psi.floor() as usize).min(max_cycles - 1);
        let rate = persona.resp_rate * (1.0 + drift).clamp(0.7, 1.3) * cycle_rate[cycle];
        let theta = psi - psi.floor();
        let resp = persona.resp_amplitude * cycle_amp[cycle] * persona.waveform(theta);
        let heart = persona.heart_amplitude * (2.0 * PI * persona.heart_rate * t + heart_phase).sin();
        let mm = if persona.micromotion_std > 0.0 { micro.sample(&mut rng) } else { 0.0 };
        samples.push(resp + heart + mm);
        rates.push(rate);
        psi += rate * dt;
        if persona.rate_drift > 0.0 {
            drift = drift * decay + innov * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(Displacement {
        samples,
        resp_rate_hz: rates,
        sample_rate: slow_rate,
        base_range: persona.base_range,
        id_label: Some(persona.id_label),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeTruth {
    pub displacement: Vec<f64>,
    pub resp_rate_hz: Vec<f64>,
    pub id_label: Option<u32>,
}

/// Complex IQ samples laid out (frame, chirp, sample) row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarCube {
    pub iq: Vec<Complex32>,
    pub frames: usize,
    pub config: RadarConfig,
    pub truth: Option<CubeTruth>,
}

impl RadarCube {
    pub fn new(iq: Vec<Complex32>, frames: usize, config: RadarConfig, truth: Option<CubeTruth>) -> Result<Self> {
        config.validate()?;
        let expected = frames * config.chirps_per_frame * config.samples_per_chirp;
        if iq.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "cube has {} samples, config implies {expected}",
                iq.len()
            )));
        }
        if iq.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("radar cube"));
        }
        Ok(Self { iq, frames, config, truth })
    }

    pub fn frame(&self, f: usize) -> &[Complex32] {
        let len = self.config.chirps_per_frame * self.config.samples_per_chirp;
        &self.iq[f * len..(f + 1) * len]
    }

    pub fn chirp(&self, f: usize, c: usize) -> &[Complex32] {
        let n = self.config.samples_per_chirp;
        &self.frame(f)[c * n..(c + 1) * n]
    }
}

pub fn synth_radar_cube(
    disp: &Displacement,
    config: &RadarConfig,
    range_noise_std: f64,
    seed: u64,
) -> Result<RadarCube> {
    config.validate()?;
    if !(range_noise_std.is_finite() && range_noise_std >= 0.0) {
        return Err(invalid("range_noise_std must be finite and non-negative"));
    }
    let rate_err = (disp.sample_rate - config.slow_time_rate()).abs();
    if rate_err > 1e-9 * config.slow_time_rate() {
        return Err(invalid(format!(
            "displacement sampled at {} Hz, config slow-time rate is {} Hz",
            disp.sample_rate,
            config.slow_time_rate()
        )));
    }
    let max_r = config.max_range();
    if let Some(bad) = (0..disp.samples.len()).map(|i| disp.range_at(i)).find(|r| !(0.0..max_r).contains(r)) {
        return Err(invalid(format!("range {bad} m outside [0, {max_r}) m")));
    }

    let n = config.samples_per_chirp;
    let chirps = config.chirps_per_frame;
    let frames = disp.samples.len();
    let res = config.range_resolution();
    let lambda = config.wavelength();
    let noise = Normal::new(0.0, range_noise_std / 2f64.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut iq = Vec::with_capacity(frames * chirps * n);
    let mut tone = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let r = disp.range_at(f);
        let carrier = Complex64::from_polar(1.0, 4.0 * PI * r / lambda);
        let step = Complex64::from_polar(1.0, 2.0 * PI * (r / res) / n as f64);
        let mut acc = carrier;
        for t in tone.iter_mut() {
            *t = acc;
            acc *= step;
        }
        for _ in 0..chirps {
            for t in &tone {
                let (nr, ni) = if range_noise_std > 0.0 {
                    (noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    (0.0, 0.0)
                };
                iq.push(Complex32::new((t.re + nr) as f32, (t.im + ni) as f32));
            }
        }
    }
    let truth = CubeTruth {
        displacement: disp.samples.clone(),
        resp_rate_hz: disp.resp_rate_hz.clone(),
        id_label: disp.id_label,
    };
    RadarCube::new(iq, frames, *config, Some(truth))
}

/// Per-sample complex noise std that yields `snr_db` at the target bin after
/// chirp averaging and the range FFT (processing gain `samples * chirps`).
pub fn noise_std_for_snr(config: &RadarConfig, snr_db: f64) -> f64 {
    let gain = (config.samples_per_chirp * config.chirps_per_frame) as f64;
    (gain / 10f64.powf(snr_db / 10.0)).sqrt()
}

/// Thirteen well-separated personas. Each trait is stratified over its range
/// (one level per persona, independently permuted per trait) so that no two
/// personas share a morphology.
pub fn default_cohort(seed: u64) -> Vec<PersonaProfile> {
    let n = COHORT_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE);
    let strata = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        idx.into_iter()
            .map(|k| lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / n as f64)
            .collect()
    };
    let rate = strata(0.22, 0.30, &mut rng);
    let amp = strata(1.6e-3, 2.4e-3, &mut rng);
    let h2 = strata(0.02, 0.40, &mut rng);
    let h3 = strata(0.0, 0.20, &mut rng);
    let h4 = strata(0.0, 0.12, &mut rng);
    let ier = strata(0.55, 1.6, &mut rng);
    let hr = strata(0.85, 1.8, &mut rng);
    let hamp = strata(0.10e-3, 0.20e-3, &mut rng);
    let micro = strata(0.01e-3, 0.03e-3, &mut rng);
    (0..n)
        .map(|i| {
            let phase = |rng: &mut ChaCha8Rng| 2.0 * PI * rng.random::<f64>();
            let harmonic_coeffs = vec![
                Harmonic { order: 2, ratio: h2[i], phase: phase(&mut rng) },
                Harmonic { order: 3, ratio: h3[i], phase: phase(&mut rng) },
                Harmonic { order: 4, ratio: h4[i], phase: phase(&mut rng) },
            ];
            PersonaProfile {
                id_label: i as u32,
                resp_rate: rate[i],
                resp_amplitude: amp[i],
                harmonic_coeffs,
                inhale_exhale_ratio: ier[i],
                heart_rate: hr[i],
                heart_amplitude: hamp[i],
                micromotion_std: micro[i],
                base_range: 0.5,
                rate_jitter: 0.03,
                amplitude_jitter: 0.05,
                rate_drift: 0.08,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> RadarConfig {
        RadarConfig { samples_per_chirp: 64, chirps_per_frame: 2, ..RadarConfig::default() }
    }

    #[test]
    fn table_config_derived_values() {
        let c = RadarConfig::default();
        assert!((c.range_resolution() - 0.037474).abs() < 1e-5);
        assert!((c.slow_time_rate() - 20.0).abs() < 1e-12);
        assert!((c.wavelength() - 3.8934e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_amplitudes_give_zero_series() {
        let mut p = PersonaProfile::pure(0, 0.25, 0.0);
        p.heart_amplitude = 0.0;
        let d = synth_displacement(&p, 20.0, 20.0, 1).unwrap();
        assert_eq!(d.samples.len(), 400);
        assert!(d.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_short_duration_and_bad_persona() {
        let p = PersonaProfile::pure(0, 0.25, 1e-3);
        assert!(synth_displacement(&p, 3.9, 20.0, 1).is_err());
        let mut bad = p.clone();
        bad.resp_amplitude = f64::NAN;
        assert!(synth_displacement(&bad, 20.0, 20.0, 1).is_err());
    }

    #[test]
    fn deterministic_for_seed() {
        let p = &default_cohort(3)[4];
        let a = synth_displacement(p, 30.0, 20.0, 9).unwrap();
        let b = synth_displacement(p, 30.0, 20.0, 9).unwrap();
        assert_eq!(a, b);
        let ca = synth_radar_cube(&a, &cfg(), 0.1, 5).unwrap();
        let cb = synth_radar_cube(&b, &cfg(), 0.1, 5).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn rejects_range_outside_unambiguous_interval() {
        let d = Displacement::stationary(5.0, 10, 20.0);
        assert!(synth_radar_cube(&d, &cfg(), 0.0, 1).is_err());
        let d = Displacement::stationary(-0.1, 10, 20.0);
        assert!(synth_radar_cube(&d, &cfg(), 0.0, 1).is_err());
    }

    #[test]
    fn waveform_is_sinusoid_without_morphology() {
        let p = PersonaProfile::pure(0, 0.25, 1.0);
        for i in 0..20 {
            let th = i as f64 / 20.0;
            assert!((p.waveform(th) + (2.0 * PI * th).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn cohort_personas_are_distinct_and_valid() {
        let c = default_cohort(0);
        assert_eq!(c.len(), COHORT_SIZE);
        for p in &c {
            p.validate().unwrap();
        }
        for i in 0..c.len() {
            for j in i + 1..c.len() {
                assert_ne!(c[i].harmonic_coeffs, c[j].harmonic_coeffs);
                assert_ne!(c[i].inhale_exhale_ratio, c[j].inhale_exhale_ratio);
            }
        }
    }
}
