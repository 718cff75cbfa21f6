//! Attribute feature decoupling: band-pass split followed by VMD.
//!
//! A segment is mean-removed and split into the respiration-band part `x_re`
//! and the remainder `x_ot`. VMD then splits `x_re` into the dominant in-band
//! mode `x_ure` and the personal-difference component `x_pd = x_re − x_ure`.

pub mod butterworth;
pub mod vmd;

use serde::{Deserialize, Serialize};

pub use butterworth::BandPass;
pub use vmd::{vmd_decompose, Mode, OmegaInit, VmdOutput, VmdParams};

use crate::dsp;
use crate::error::{ensure_finite, Result};
use crate::preprocess::PhaseSegment;
use crate::RESP_BAND;

pub const DEFAULT_FILTER_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfdParams {
    pub band: (f64, f64),
    pub filter_order: usize,
    pub vmd: VmdParams,
}

impl Default for AfdParams {
    fn default() -> Self {
        Self { band: RESP_BAND, filter_order: DEFAULT_FILTER_ORDER, vmd: VmdParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedSignal {
    pub x_ure: Vec<f64>,
    pub x_pd: Vec<f64>,
    pub x_ot: Vec<f64>,
    pub modes: Vec<Mode>,
    /// Mean removed from the segment before filtering.
    pub mean: f64,
    pub vmd_converged: bool,
}

impl DecomposedSignal {
    pub fn len(&self) -> usize {
        self.x_ure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_ure.is_empty()
    }

    pub fn x_re(&self) -> Vec<f64> {
        dsp::add(&self.x_ure, &self.x_pd)
    }

    /// `x_ure + x_pd + x_ot`, the mean-removed segment.
    pub fn recombine(&self) -> Vec<f64> {
        self.x_ure
            .iter()
            .zip(&self.x_pd)
            .zip(&self.x_ot)
            .map(|((a, b), c)| a + b + c)
            .collect()
    }
}

/// Zero-phase band-pass of the mean-removed segment. Returns `(x_re, x_ot)` with
/// `x_re + x_ot` equal to the mean-removed segment.
pub fn bandpass_butterworth(segment: &[f64], sample_rate: f64, band: (f64, f64), order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    ensure_finite(segment, "segment")?;
    let bp = BandPass::design(band.0, band.1, order, sample_rate)?;
    let centred = dsp::demean(segment);
    let x_re = bp.filtfilt(&centred);
    let x_ot = dsp::sub(&centred, &x_re);
    Ok((x_re, x_ot))
}

/// Picks the mode with the most energy inside `band` as `x_ure`; ties go to the
/// lower centre frequency. `x_pd` is everything else in `x_re`: the remaining
/// modes plus the VMD reconstruction residual.
pub fn split_components(x_re: &[f64], modes: &[Mode], sample_rate: f64, band: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in modes.iter().enumerate() {
        let e = dsp::band_energy(&m.u, sample_rate, band);
        if best.is_none_or(|(_, b)| e > b) {
            best = Some((i, e));
        }
    }
    let x_ure = match best {
        Some((i, _)) => modes[i].u.clone(),
        None => vec![0.0; x_re.len()],
    };
    let x_pd = dsp::sub(x_re, &x_ure);
    (x_ure, x_pd)
}

pub fn decompose(segment: &PhaseSegment, params: &AfdParams) -> Result<DecomposedSignal> {
    decompose_series(&segment.phase, segment.sample_rate, params)
}

pub fn decompose_series(x: &[f64], sample_rate: f64, params: &AfdParams) -> Result<DecomposedSignal> {
    let (x_re, x_ot) = bandpass_butterworth(x, sample_rate, params.band, params.filter_order)?;
    let out = vmd_decompose(&x_re, sample_rate, &params.vmd)?;
    let (x_ure, x_pd) = split_components(&x_re, &out.modes, sample_rate, params.band);
    Ok(DecomposedSignal {
        x_ure,
        x_pd,
        x_ot,
        modes: out.modes,
        mean: dsp::mean(x),
        vmd_converged: out.converged,
    })
}
