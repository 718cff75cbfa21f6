//! Identity-recognition attacker: handcrafted morphology features and a
//! multinomial logistic regression over persona labels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::par;
use crate::RESP_BAND;

pub const N_BAND_ENERGIES: usize = 8;
pub const N_HARMONICS: usize = 3;
pub const TEMPLATE_LEN: usize = 32;
pub const FEATURE_DIM: usize = N_BAND_ENERGIES + N_HARMONICS + 1 + TEMPLATE_LEN + 1;
/// Frequency span covered by the band-energy features.
pub const FEATURE_SPAN: (f64, f64) = (0.1, 4.0);
/// Band used for the waveform-shape signal (respiration plus its first harmonics).
pub const MORPHOLOGY_BAND: (f64, f64) = (0.1, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdFeatureVector {
    pub band_energies: [f64; N_BAND_ENERGIES],
    pub harmonic_ratios: [f64; N_HARMONICS],
    pub duty_ratio: f64,
    pub cycle_template: Vec<f64>,
    pub spectral_centroid: f64,
    /// False when no complete respiratory cycle was found (template zeroed).
    pub valid: bool,
}

impl IdFeatureVector {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(FEATURE_DIM);
        v.extend_from_slice(&self.band_energies);
        v.extend_from_slice(&self.harmonic_ratios);
        v.push(self.duty_ratio);
        v.extend_from_slice(&self.cycle_template);
        v.push(self.spectral_centroid);
        v
    }
}

/// Keeps only the DFT bins whose |frequency| lies in `band` (circular, so shift-equivariant).
fn fft_band_limit(spec: &[num_complex::Complex64], fs: f64, band: (f64, f64)) -> Vec<f64> {
    let n = spec.len();
    let masked: Vec<_> = spec
        .iter()
        .enumerate()
        .map(|(k, c)| if dsp::bin_in_band(k, n, fs, band) { *c } else { num_complex::Complex64::new(0.0, 0.0) })
        .collect();
    dsp::ifft_real(&masked)
}

/// Upward zero crossings as fractional sample positions, treating `x` as circular.
fn upward_crossings(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::new();
    for i in 0..n {
        let (a, b) = (x[i], x[(i + 1) % n]);
        if a < 0.0 && b >= 0.0 {
            out.push(i as f64 + a / (a - b));
        }
    }
    out
}

fn circular_lerp(x: &[f64], pos: f64) -> f64 {
    let n = x.len() as f64;
    let p = pos.rem_euclid(n);
    let i = p.floor() as usize % x.len();
    let frac = p - p.floor();
    x[i] * (1.0 - frac) + x[(i + 1) % x.len()] * frac
}

pub fn extract_id_features(segment: &[f64], sample_rate: f64) -> Result<IdFeatureVector> {
    ensure_finite(segment, "adversary input")?;
    let n = segment.len();
    if n < 8 {
        return Err(Error::TooShort { needed: 8, got: n });
    }
    if !(sample_rate > 2.0 * FEATURE_SPAN.1) {
        return Err(invalid("sample rate too low for identity features"));
    }
    let sd = dsp::std_dev(segment);
    let x: Vec<f64> = if sd > 0.0 { dsp::demean(segment).iter().map(|v| v / sd).collect() } else { vec![0.0; n] };
    let spec = dsp::fft_real(&x);
    let half = n / 2;
    let freq = |k: usize| k as f64 * sample_rate / n as f64;

    let lo = FEATURE_SPAN.0.ln();
    let step = (FEATURE_SPAN.1.ln() - lo) / N_BAND_ENERGIES as f64;
    let mut band_energies = [0.0; N_BAND_ENERGIES];
    let (mut cnum, mut cden) = (0.0, 0.0);
    for k in 1..=half {
        let f = freq(k);
        if f < FEATURE_SPAN.0 || f >= FEATURE_SPAN.1 {
            continue;
        }
        let p = spec[k].norm_sqr() / n as f64;
        let b = (((f.ln() - lo) / step).floor() as usize).min(N_BAND_ENERGIES - 1);
        band_energies[b] += p;
        cnum += f * p;
        cden += p;
    }
    band_energies.iter_mut().for_each(|e| *e = (*e + 1e-12).ln());
    let spectral_centroid = if cden > 0.0 { cnum / cden } else { 0.0 };

    let mag = |k: usize| spec[k].norm();
    let band_bins: Vec<usize> = (1..=half).filter(|&k| freq(k) >= RESP_BAND.0 && freq(k) <= RESP_BAND.1).collect();
    let mut harmonic_ratios = [0.0; N_HARMONICS];
    if let Some(&k0) = band_bins.iter().max_by(|a, b| mag(**a).total_cmp(&mag(**b)).then(b.cmp(a))) {
        let a0 = mag(k0);
        if a0 > 0.0 {
            for (h, r) in harmonic_ratios.iter_mut().enumerate() {
                let centre = k0 * (h + 2);
                let peak = (centre.saturating_sub(1)..=centre + 1).filter(|&k| k <= half).map(mag).fold(0.0, f64::max);
                *r = peak / a0;
            }
        }
    }

    let resp = fft_band_limit(&spec, sample_rate, RESP_BAND);
    let morph = fft_band_limit(&spec, sample_rate, MORPHOLOGY_BAND);
    let (mut rising, mut falling) = (0usize, 0usize);
    for i in 0..n {
        let d = morph[(i + 1) % n] - morph[i];
        if d > 0.0 {
            rising += 1;
        } else if d < 0.0 {
            falling += 1;
        }
    }
    let duty_ratio = if falling > 0 { rising as f64 / falling as f64 } else { 1.0 };

    let crossings = upward_crossings(&resp);
    let mut template = vec![0.0; TEMPLATE_LEN];
    let mut cycles = 0usize;
    for (i, &start) in crossings.iter().enumerate() {
        let mut end = crossings[(i + 1) % crossings.len()];
        if end <= start {
            end += n as f64;
        }
        let len = end - start;
        if crossings.len() < 2 || len <= 1.0 {
            continue;
        }
        for (j, t) in template.iter_mut().enumerate() {
            *t += circular_lerp(&morph, start + len * j as f64 / TEMPLATE_LEN as f64);
        }
        cycles += 1;
    }
    let mut valid = cycles > 0;
    if valid {
        let m = dsp::mean(&template);
        template.iter_mut().for_each(|v| *v -= m);
        let norm = dsp::energy(&template).sqrt();
        if norm > 0.0 {
            template.iter_mut().for_each(|v| *v /= norm);
        } else {
            valid = false;
        }
    }
    if !valid {
        template = vec![0.0; TEMPLATE_LEN];
    }
    Ok(IdFeatureVector { band_energies, harmonic_ratios, duty_ratio, cycle_template: template, spectral_centroid, valid })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self { epochs: 400, lr: 0.5, l2: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdClassifier {
    /// `classes × FEATURE_DIM`, acting on standardised features.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub class_labels: Vec<u32>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    pub training_meta: TrainingMeta,
}

fn softmax_in_place(z: &mut [f64]) {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - mx).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl IdClassifier {
    fn standardise(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.feature_mean).zip(&self.feature_scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    fn logits(&self, xs: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(&self.biases).map(|(w, b)| b + w.iter().zip(xs).map(|(a, c)| a * c).sum::<f64>()).collect()
    }

    pub fn predict_proba(&self, f: &IdFeatureVector) -> Vec<f64> {
        let mut z = self.logits(&self.standardise(&f.to_vec()));
        softmax_in_place(&mut z);
        z
    }

    pub fn predict(&self, f: &IdFeatureVector) -> u32 {
        let p = self.predict_proba(f);
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap_or(0);
        self.class_labels[best]
    }
}

/// Full-batch gradient descent on the mean cross-entropy (plus a small L2 term).
pub fn train_classifier(data: &[(IdFeatureVector, u32)], meta: TrainingMeta) -> Result<IdClassifier> {
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for (_, l) in data {
        *counts.entry(*l).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(invalid("identity classifier needs at least two classes"));
    }
    if !(meta.lr >= 0.0 && meta.l2 >= 0.0) {
        return Err(invalid("learning rate and L2 weight must be non-negative"));
    }
    let labels: Vec<u32> = counts.keys().copied().collect();
    let index: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
    let c = labels.len();
    let raw: Vec<Vec<f64>> = data.iter().map(|(f, _)| f.to_vec()).collect();
    let n = raw.len() as f64;
    let d = FEATURE_DIM;
    let mean: Vec<f64> = (0..d).map(|j| raw.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let s = (raw.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut clf = IdClassifier {
        weights: vec![vec![0.0; d]; c],
        biases: vec![0.0; c],
        class_labels: labels,
        feature_mean: mean,
        feature_scale: scale,
        training_meta: meta,
    };
    let xs: Vec<Vec<f64>> = raw.iter().map(|r| clf.standardise(r)).collect();
    let ys: Vec<usize> = data.iter().map(|(_, l)| index[l]).collect();
    for _ in 0..meta.epochs {
        let mut gw = vec![vec![0.0; d]; c];
        let mut gb = vec![0.0; c];
        for (x, &y) in xs.iter().zip(&ys) {
            let mut p = clf.logits(x);
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for k in 0..c {
                gb[k] += p[k];
                for j in 0..d {
                    gw[k][j] += p[k] * x[j];
                }
            }
        }
        for k in 0..c {
            clf.biases[k] -= meta.lr * gb[k] / n;
            for j in 0..d {
                clf.weights[k][j] -= meta.lr * (gw[k][j] / n + meta.l2 * clf.weights[k][j]);
            }
        }
    }
    Ok(clf)
}

/// Fraction of correct argmax predictions.
pub fn irac(clf: &IdClassifier, test: &[(IdFeatureVector, u32)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Empty("identity test set"));
    }
    let hits = test.iter().filter(|(f, l)| clf.predict(f) == *l).count();
    Ok(hits as f64 / test.len() as f64)
}

/// Fraction of positions where `pred == truth`.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::ShapeMismatch("prediction and truth lists differ in length".into()));
    }
    if pred.is_empty() {
        return Err(Error::Empty("identity predictions"));
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<u32>,
    /// Row = truth, column = prediction.
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn from_predictions(pred: &[u32], truth: &[u32]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::ShapeMismatch("prediction and truth lists differ in length".into()));
        }
        let mut labels: Vec<u32> = truth.iter().chain(pred).copied().collect();
        labels.sort_unstable();
        labels.dedup();
        let idx: BTreeMap<u32, usize> = labels.iter().enumerate().map(|(i, l)| (*l, i)).collect();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for (p, t) in pred.iter().zip(truth) {
            counts[idx[t]][idx[p]] += 1;
        }
        Ok(Self { labels, counts })
    }

    /// Diagonal over row sum per truth class (0 for classes never seen as truth).
    pub fn per_class_accuracy(&self) -> Vec<(u32, f64)> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let row: usize = self.counts[i].iter().sum();
                (l, if row > 0 { self.counts[i][i] as f64 / row as f64 } else { 0.0 })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub irac: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub per_class_accuracy: Vec<(u32, f64)>,
    pub confusion: ConfusionMatrix,
}

pub fn features_for(series: &[Vec<f64>], sample_rate: f64) -> Result<Vec<IdFeatureVector>> {
    par::try_map(series, |s| extract_id_features(s, sample_rate))
}

/// Trains on `train`, scores `test`.
pub fn run_attack(train: &[(IdFeatureVector, u32)], test: &[(IdFeatureVector, u32)], meta: TrainingMeta) -> Result<AttackReport> {
    let clf = train_classifier(train, meta)?;
    let pred: Vec<u32> = test.iter().map(|(f, _)| clf.predict(f)).collect();
    let truth: Vec<u32> = test.iter().map(|(_, l)| *l).collect();
    let confusion = ConfusionMatrix::from_predictions(&pred, &truth)?;
    Ok(AttackReport {
        irac: accuracy(&pred, &truth)?,
        n_train: train.len(),
        n_test: test.len(),
        per_class_accuracy: confusion.per_class_accuracy(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn wave(n: usize, f: f64, h2: f64, shift: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = (i + shift) as f64 / 20.0;
                (2.0 * PI * f * t).sin() + h2 * (4.0 * PI * f * t + 0.3).sin()
            })
            .collect()
    }

    #[test]
    fn dimension_and_sinusoid_duty() {
        let f = extract_id_features(&wave(400, 0.25, 0.0, 0), 20.0).unwrap();
        assert_eq!(f.to_vec().len(), 45);
        assert!(f.valid);
        assert!((f.duty_ratio - 1.0).abs() < 0.05, "{}", f.duty_ratio);
        assert!((dsp::energy(&f.cycle_template) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn harmonic_ratio_separates_personas() {
        let a = extract_id_features(&wave(400, 0.25, 0.4, 0), 20.0).unwrap();
        let b = extract_id_features(&wave(400, 0.25, 0.02, 0), 20.0).unwrap();
        assert!(a.harmonic_ratios[0] > 3.0 * b.harmonic_ratios[0]);
    }

    #[test]
    fn shift_invariance() {
        // 0.25 Hz at 20 Hz has an 80-sample period; 400 samples hold exactly five cycles.
        let x = wave(400, 0.25, 0.3, 0);
        let y: Vec<f64> = (0..400).map(|i| x[(i + 37) % 400]).collect();
        let a = extract_id_features(&x, 20.0).unwrap().to_vec();
        let b = extract_id_features(&y, 20.0).unwrap().to_vec();
        assert!(dsp::rel_l2_error(&a, &b) * dsp::energy(&b).sqrt() < 1e-3);
    }

    #[test]
    fn flat_input_is_flagged() {
        let f = extract_id_features(&[1.0; 64], 20.0).unwrap();
        assert!(!f.valid);
        assert!(f.cycle_template.iter().all(|&v| v == 0.0));
    }

    fn toy(n_per: usize, seed: u64) -> Vec<(IdFeatureVector, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..2 * n_per)
            .map(|i| {
                let l = (i % 2) as u32;
                let h2 = if l == 0 { 0.05 } else { 0.5 };
                let x: Vec<f64> = wave(400, 0.25, h2, rng.random_range(0..80)).iter().map(|v| v + 0.05 * rng.random_range(-1.0..1.0)).collect();
                (extract_id_features(&x, 20.0).unwrap(), l)
            })
            .collect()
    }

    #[test]
    fn separable_and_deterministic() {
        let data = toy(10, 1);
        let a = train_classifier(&data, TrainingMeta::default()).unwrap();
        let b = train_classifier(&data, TrainingMeta::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(irac(&a, &data).unwrap(), 1.0);
    }

    #[test]
    fn errors_and_trivial_accuracies() {
        let data = toy(4, 2);
        let one: Vec<_> = data.iter().filter(|(_, l)| *l == 0).cloned().collect();
        assert!(train_classifier(&one, TrainingMeta::default()).is_err());
        assert_eq!(accuracy(&[0, 0, 0, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
        assert_eq!(accuracy(&[3, 4], &[3, 4]).unwrap(), 1.0);
        let clf = train_classifier(&data, TrainingMeta::default()).unwrap();
        assert!(irac(&clf, &[]).is_err());
    }

    #[test]
    fn confusion_rows_are_truth() {
        let cm = ConfusionMatrix::from_predictions(&[1, 1, 2, 2], &[1, 2, 2, 2]).unwrap();
        assert_eq!(cm.labels, vec![1, 2]);
        assert_eq!(cm.counts, vec![vec![1, 0], vec![1, 2]]);
        let pc = cm.per_class_accuracy();
        assert_eq!(pc[0], (1, 1.0));
        assert!((pc[1].1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
