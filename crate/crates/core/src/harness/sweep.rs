//! Scenario sweeps over distance, respiratory pattern and window duration.

use serde::{Deserialize, Serialize};

use super::cohort::{build_dataset, CohortSpec, Pattern};
use super::metrics::{compute_metrics, MetricsReport, Scenario, StdMode};
use crate::adversary::TrainingMeta;
use crate::afd::AfdParams;
use crate::error::{invalid, Result};
use crate::fpe::{EncryptionKey, PerturbationParams, DEFAULT_EPSILON_MARGIN};
use crate::optim::search::run_pipeline;
use crate::par;
use crate::ptn::PtnParams;
use crate::sim::{RadarConfig, COHORT_SIZE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub distances_m: Vec<f64>,
    pub patterns: Vec<Pattern>,
    /// Segment (window) lengths.
    pub durations_s: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_personas: usize,
    pub capture_s: f64,
    pub overlap: f64,
    pub beta_amp: f64,
    pub beta_phase: f64,
    pub key_bits: usize,
    pub epsilon_margin: usize,
    pub adversary: TrainingMeta,
    pub std_mode: StdMode,
    pub lambda_w: f64,
    pub radar: RadarConfig,
    pub afd: AfdParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            distances_m: vec![0.5, 1.0, 1.5],
            patterns: Pattern::ALL.to_vec(),
            durations_s: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            seeds: vec![0],
            n_personas: COHORT_SIZE,
            capture_s: 300.0,
            overlap: 0.5,
            beta_amp: 10f64.powf(2.5),
            beta_phase: 0.0,
            key_bits: 128,
            epsilon_margin: DEFAULT_EPSILON_MARGIN,
            adversary: TrainingMeta::default(),
            std_mode: StdMode::AsWritten,
            lambda_w: 0.1,
            radar: RadarConfig::desk(),
            afd: AfdParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.distances_m.is_empty() || self.patterns.is_empty() || self.durations_s.is_empty() || self.seeds.is_empty() {
            return Err(invalid("scenario axes must be non-empty"));
        }
        let max_range = self.radar.max_range();
        if self.distances_m.iter().any(|d| !(d.is_finite() && *d > 0.0 && *d < max_range)) {
            return Err(invalid(format!("distances must lie in (0, {max_range:.3}) m")));
        }
        if self.durations_s.iter().any(|d| !(d.is_finite() && *d > 0.0 && *d <= self.capture_s)) {
            return Err(invalid("durations must be positive and no longer than the capture"));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(invalid("overlap must be in [0, 1)"));
        }
        PerturbationParams { beta_amp: self.beta_amp, beta_phase: self.beta_phase, epsilon_margin: self.epsilon_margin, ..PerturbationParams::default() }
            .validate(self.key_bits)
    }

    /// Every cell of the grid, sorted by scenario key.
    pub fn cells(&self) -> Vec<Scenario> {
        let mut out = Vec::new();
        for &distance_m in &self.distances_m {
            for &pattern in &self.patterns {
                for &duration_s in &self.durations_s {
                    for &seed in &self.seeds {
                        out.push(Scenario { distance_m, pattern, duration_s, seed });
                    }
                }
            }
        }
        out.sort_by_key(|s| s.key());
        out.dedup_by(|a, b| a.key() == b.key());
        out
    }
}

/// Simulates, encrypts, attacks and monitors one cell.
pub fn run_cell(scenario: &Scenario, cfg: &ScenarioConfig) -> Result<MetricsReport> {
    let spec = CohortSpec {
        n_personas: cfg.n_personas,
        capture_s: cfg.capture_s,
        window_s: scenario.duration_s,
        overlap: cfg.overlap,
        distance_m: scenario.distance_m,
        pattern: scenario.pattern,
        seed: scenario.seed,
    };
    let ds = build_dataset(&spec, &cfg.radar, &cfg.afd)?;
    let key = EncryptionKey::random(cfg.key_bits, scenario.seed)?;
    let pp = PerturbationParams { beta_amp: cfg.beta_amp, beta_phase: cfg.beta_phase, epsilon_margin: cfg.epsilon_margin, ..PerturbationParams::default() };
    let ptn = PtnParams::new(ds.sample_rate, scenario.seed)?;
    let run = run_pipeline(&ds, &key, &pp, &ptn, cfg.adversary, cfg.lambda_w)?;
    compute_metrics(&run.test_pred_bpm, &run.test_truth_bpm, &run.id_pred, &run.id_truth, scenario.clone(), cfg.std_mode)
}

/// Runs every cell in parallel; reports come back in scenario-key order.
pub fn run_scenario_sweep(cfg: &ScenarioConfig) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    par::try_map(&cfg.cells(), |s| run_cell(s, cfg))
}
