//! Synthetic cohorts: personas → cubes → segments → decompositions, split
//! 80/20 per persona.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::afd::{decompose, AfdParams, DecomposedSignal};
use crate::error::{invalid, Error, Result};
use crate::fpe::estimate_t_res;
use crate::par;
use crate::preprocess::{self, PhaseSegment};
use crate::sim::{self, PersonaProfile, RadarConfig};

pub const REFERENCE_DISTANCE_M: f64 = 0.5;
pub const REFERENCE_SNR_DB: f64 = 20.0;
pub const TEST_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Natural,
    Deep,
    Irregular,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Natural, Pattern::Deep, Pattern::Irregular];

    pub fn as_str(&self) -> &'static str {
        match self {
            Pattern::Natural => "natural",
            Pattern::Deep => "deep",
            Pattern::Irregular => "irregular",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Pattern::Natural),
            "deep" => Ok(Pattern::Deep),
            "irregular" => Ok(Pattern::Irregular),
            other => Err(invalid(format!("unknown respiratory pattern '{other}'"))),
        }
    }
}

/// Segment SNR at `distance_m`: received power falls as `1/d⁴`, 20 dB at 0.5 m.
pub fn snr_for_distance(distance_m: f64) -> Result<f64> {
    if !(distance_m.is_finite() && distance_m > 0.0) {
        return Err(invalid("distance must be positive"));
    }
    Ok(REFERENCE_SNR_DB - 40.0 * (distance_m / REFERENCE_DISTANCE_M).log10())
}

pub fn apply_pattern(p: &PersonaProfile, pattern: Pattern) -> PersonaProfile {
    let mut q = p.clone();
    match pattern {
        Pattern::Natural => {}
        Pattern::Deep => {
            q.resp_amplitude *= 2.0;
            q.resp_rate = (q.resp_rate * 0.8).max(0.1);
        }
        Pattern::Irregular => {
            q.rate_jitter = 0.2;
            q.amplitude_jitter = 0.2;
        }
    }
    q
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_personas: usize,
    /// Capture length per persona.
    pub capture_s: f64,
    pub window_s: f64,
    pub overlap: f64,
    pub distance_m: f64,
    pub pattern: Pattern,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_personas: sim::COHORT_SIZE,
            capture_s: 1800.0,
            window_s: preprocess::DEFAULT_WINDOW_S,
            overlap: preprocess::DEFAULT_OVERLAP,
            distance_m: REFERENCE_DISTANCE_M,
            pattern: Pattern::Natural,
            seed: 0,
        }
    }
}

/// One decomposed segment with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub decomposed: DecomposedSignal,
    pub label: u32,
    pub truth_bpm: f64,
    pub t_res: f64,
    pub start_time: f64,
    pub segment_index: usize,
    pub source_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sample_rate: f64,
    pub samples: Vec<Sample>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn n_classes(&self) -> usize {
        let mut l = self.labels();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// Per-class seeded shuffle; the first `ceil(0.2·n)` of each class go to test.
pub fn stratified_split(labels: &[u32], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(*l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5711_7000);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        idx.shuffle(&mut rng);
        let k = if idx.len() >= 2 { ((idx.len() as f64 * TEST_FRACTION).ceil() as usize).min(idx.len() - 1) } else { 0 };
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Simulated, preprocessed segments for every persona of the default cohort.
pub fn simulate_segments(spec: &CohortSpec, radar: &RadarConfig) -> Result<Vec<PhaseSegment>> {
    if spec.n_personas < 2 || spec.n_personas > sim::COHORT_SIZE {
        return Err(invalid(format!("cohort needs 2..={} personas", sim::COHORT_SIZE)));
    }
    let snr = snr_for_distance(spec.distance_m)?;
    let noise = sim::noise_std_for_snr(radar, snr);
    let fs = radar.slow_time_rate();
    let personas: Vec<PersonaProfile> = sim::default_cohort(spec.seed)
        .into_iter()
        .take(spec.n_personas)
        .map(|p| PersonaProfile { base_range: spec.distance_m, ..apply_pattern(&p, spec.pattern) })
        .collect();
    let per = par::try_map(&personas, |p| -> Result<Vec<PhaseSegment>> {
        let s = spec.seed.wrapping_mul(1000).wrapping_add(p.id_label as u64);
        let disp = sim::synth_displacement(p, spec.capture_s, fs, s)?;
        let cube = sim::synth_radar_cube(&disp, radar, noise, s ^ 0xC0BE)?;
        let id = format!("persona{:02}", p.id_label);
        Ok(preprocess::preprocess_cube(&cube, spec.window_s, spec.overlap, preprocess::DEFAULT_EXCLUDE_DC_BINS, &id)?.1)
    })?;
    Ok(per.into_iter().flatten().collect())
}

/// Decomposes labelled segments and splits them.
pub fn dataset_from_segments(segments: &[PhaseSegment], afd: &AfdParams, seed: u64) -> Result<Dataset> {
    let first = segments.first().ok_or(Error::Empty("segments"))?;
    let fs = first.sample_rate;
    if segments.iter().any(|s| (s.sample_rate - fs).abs() > 1e-9) {
        return Err(invalid("segments have mixed sample rates"));
    }
    let samples = par::try_map(segments, |s| -> Result<Sample> {
        let truth = s.truth.as_ref().ok_or_else(|| invalid(format!("segment {} of {} has no truth", s.segment_index, s.source_id)))?;
        let label = truth.id_label.ok_or_else(|| invalid("segment truth has no identity label"))?;
        let mut d = decompose(s, afd)?;
        d.modes.clear();
        let t_res = estimate_t_res(&d.x_ure, fs);
        Ok(Sample {
            decomposed: d,
            label,
            truth_bpm: truth.resp_rate_bpm,
            t_res,
            start_time: s.start_time,
            segment_index: s.segment_index,
            source_id: s.source_id.clone(),
        })
    })?;
    dataset_from_samples(samples, fs, seed)
}

/// Splits already-decomposed samples.
pub fn dataset_from_samples(samples: Vec<Sample>, sample_rate: f64, seed: u64) -> Result<Dataset> {
    if samples.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let labels: Vec<u32> = samples.iter().map(|s| s.label).collect();
    let (train, test) = stratified_split(&labels, seed);
    Ok(Dataset { sample_rate, samples, train, test })
}

pub fn build_dataset(spec: &CohortSpec, radar: &RadarConfig, afd: &AfdParams) -> Result<Dataset> {
    dataset_from_segments(&simulate_segments(spec, radar)?, afd, spec.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_model() {
        assert!((snr_for_distance(0.5).unwrap() - 20.0).abs() < 1e-12);
        assert!((snr_for_distance(1.0).unwrap() - (20.0 - 40.0 * 2f64.log10())).abs() < 1e-12);
        assert!(snr_for_distance(1.5).unwrap() < snr_for_distance(1.0).unwrap());
        assert!(snr_for_distance(0.0).is_err());
    }

    #[test]
    fn patterns() {
        let p = sim::default_cohort(1)[0].clone();
        let d = apply_pattern(&p, Pattern::Deep);
        assert_eq!(d.resp_amplitude, 2.0 * p.resp_amplitude);
        assert!((d.resp_rate - 0.8 * p.resp_rate).abs() < 1e-15);
        let i = apply_pattern(&p, Pattern::Irregular);
        assert_eq!(i.rate_jitter, 0.2);
        assert_eq!(apply_pattern(&p, Pattern::Natural), p);
        assert_eq!("deep".parse::<Pattern>().unwrap(), Pattern::Deep);
        assert!("shallow".parse::<Pattern>().is_err());
    }

    #[test]
    fn split_is_stratified_and_disjoint() {
        let labels: Vec<u32> = (0..100).map(|i| (i % 4) as u32).collect();
        let (tr, te) = stratified_split(&labels, 3);
        assert_eq!(tr.len() + te.len(), 100);
        for c in 0..4 {
            assert_eq!(te.iter().filter(|&&i| labels[i] == c).count(), 5);
        }
        assert!(te.iter().all(|i| !tr.contains(i)));
        assert_eq!(stratified_split(&labels, 3), (tr, te));
    }

    #[test]
    fn small_cohort_builds() {
        let spec = CohortSpec { n_personas: 3, capture_s: 60.0, ..CohortSpec::default() };
        let ds = build_dataset(&spec, &RadarConfig::desk(), &AfdParams::default()).unwrap();
        assert_eq!(ds.len(), 3 * 5);
        assert_eq!(ds.n_classes(), 3);
        assert_eq!(ds.test.len(), 3);
        assert!(ds.samples.iter().all(|s| (8.0..25.0).contains(&s.truth_bpm)));
    }
}
