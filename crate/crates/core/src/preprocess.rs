//! Range FFT, target-bin selection, phase extraction, unwrapping and segmentation.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{invalid, Error, Result};
use crate::sim::RadarCube;

pub const DEFAULT_WINDOW_S: f64 = 20.0;
pub const DEFAULT_OVERLAP: f64 = 0.5;
pub const DEFAULT_EXCLUDE_DC_BINS: usize = 2;
/// Longest respiratory period of interest (0.1 Hz).
pub const MAX_RESP_PERIOD_S: f64 = 10.0;

/// Slow-time × range-bin matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeMatrix {
    pub data: Vec<Complex64>,
    pub rows: usize,
    pub cols: usize,
}

impl RangeMatrix {
    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// Time-averaged magnitude of each range bin.
    pub fn mean_magnitudes(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (a, v) in acc.iter_mut().zip(self.row(r)) {
                *a += v.norm();
            }
        }
        acc.iter_mut().for_each(|a| *a /= self.rows.max(1) as f64);
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetBin {
    pub bin_index: usize,
    pub range: f64,
    pub mean_magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub resp_rate_bpm: f64,
    pub id_label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSegment {
    pub phase: Vec<f64>,
    pub sample_rate: f64,
    pub start_time: f64,
    pub source_id: String,
    pub segment_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SegmentTruth>,
}

impl PhaseSegment {
    pub fn duration(&self) -> f64 {
        self.phase.len() as f64 / self.sample_rate
    }
}

/// Chirp-averaged fast-time FFT of every frame.
pub fn range_fft(cube: &RadarCube) -> Result<RangeMatrix> {
    let n = cube.config.samples_per_chirp;
    let chirps = cube.config.chirps_per_frame;
    if cube.frames == 0 || cube.iq.is_empty() {
        return Err(Error::Empty("radar cube"));
    }
    let mut data = Vec::with_capacity(cube.frames * n);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let scale = 1.0 / chirps as f64;
    for f in 0..cube.frames {
        buf.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for c in 0..chirps {
            for (b, v) in buf.iter_mut().zip(cube.chirp(f, c)) {
                b.re += v.re as f64;
                b.im += v.im as f64;
            }
        }
        buf.iter_mut().for_each(|b| *b *= scale);
        dsp::fft_in_place(&mut buf);
        data.extend_from_slice(&buf);
    }
    Ok(RangeMatrix { data, rows: cube.frames, cols: n })
}

/// Strongest range bin at or above `exclude_dc_bins`; ties go to the smaller index.
pub fn select_target_bin(rfft: &RangeMatrix, exclude_dc_bins: usize, range_resolution: f64) -> Result<TargetBin> {
    if rfft.rows == 0 || rfft.cols == 0 {
        return Err(Error::Empty("range matrix"));
    }
    let mags = rfft.mean_magnitudes();
    let mut best: Option<(usize, f64)> = None;
    for (k, &m) in mags.iter().enumerate().skip(exclude_dc_bins) {
        if m > 0.0 && best.is_none_or(|(_, b)| m > b) {
            best = Some((k, m));
        }
    }
    let (bin_index, mean_magnitude) = best.ok_or(Error::NoTarget)?;
    Ok(TargetBin { bin_index, range: bin_index as f64 * range_resolution, mean_magnitude })
}

/// Wrapped phase in (−π, π]; an exactly zero sample has phase 0.
pub fn extract_phase(rfft: &RangeMatrix, bin: &TargetBin) -> Result<Vec<f64>> {
    if bin.bin_index >= rfft.cols {
        return Err(invalid(format!("bin {} outside {} range bins", bin.bin_index, rfft.cols)));
    }
    Ok(rfft.column(bin.bin_index).iter().map(|&c| wrapped_angle(c)).collect())
}

pub fn wrapped_angle(c: Complex64) -> f64 {
    if c.re == 0.0 && c.im == 0.0 {
        return 0.0;
    }
    let a = c.im.atan2(c.re);
    // atan2 returns −π for (−x, −0.0); fold onto the closed end of (−π, π].
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Adds multiples of 2π so successive samples never differ by more than π.
pub fn unwrap_phase(wrapped: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(wrapped.len());
    let mut offset = 0.0;
    for (i, &p) in wrapped.iter().enumerate() {
        if i > 0 {
            let d = p - wrapped[i - 1];
            if d > PI {
                offset -= 2.0 * PI * ((d - PI) / (2.0 * PI)).ceil().max(1.0);
            } else if d < -PI {
                offset += 2.0 * PI * ((-d - PI) / (2.0 * PI)).ceil().max(1.0);
            }
        }
        out.push(p + offset);
    }
    out
}

/// Window length and hop in samples.
pub fn segment_geometry(sample_rate: f64, window_s: f64, overlap_frac: f64) -> Result<(usize, usize)> {
    if !(0.0..1.0).contains(&overlap_frac) {
        return Err(invalid("overlap fraction must be in [0, 1)"));
    }
    let w = (window_s * sample_rate).round() as usize;
    if w < 2 {
        return Err(invalid("window must span at least 2 samples"));
    }
    let hop = ((w as f64) * (1.0 - overlap_frac)).round().max(1.0) as usize;
    Ok((w, hop))
}

pub fn segment(
    phase: &[f64],
    sample_rate: f64,
    window_s: f64,
    overlap_frac: f64,
    source_id: &str,
) -> Result<Vec<PhaseSegment>> {
    if window_s < MAX_RESP_PERIOD_S {
        return Err(invalid(format!(
            "window {window_s} s must exceed the longest respiratory period ({MAX_RESP_PERIOD_S} s)"
        )));
    }
    let (w, hop) = segment_geometry(sample_rate, window_s, overlap_frac)?;
    if phase.len() < w {
        return Err(Error::TooShort { needed: w, got: phase.len() });
    }
    let count = (phase.len() - w) / hop + 1;
    Ok((0..count)
        .map(|i| PhaseSegment {
            phase: phase[i * hop..i * hop + w].to_vec(),
            sample_rate,
            start_time: (i * hop) as f64 / sample_rate,
            source_id: source_id.to_string(),
            segment_index: i,
            truth: None,
        })
        .collect())
}

/// Full chain for one cube: range FFT → target bin → phase → unwrap → segments,
/// with per-segment ground truth attached when the cube carries it.
pub fn preprocess_cube(
    cube: &RadarCube,
    window_s: f64,
    overlap_frac: f64,
    exclude_dc_bins: usize,
    source_id: &str,
) -> Result<(TargetBin, Vec<PhaseSegment>)> {
    let rfft = range_fft(cube)?;
    let bin = select_target_bin(&rfft, exclude_dc_bins, cube.config.range_resolution())?;
    let phase = unwrap_phase(&extract_phase(&rfft, &bin)?);
    let fs = cube.config.slow_time_rate();
    let mut segs = segment(&phase, fs, window_s, overlap_frac, source_id)?;
    if let Some(truth) = &cube.truth {
        let (w, hop) = segment_geometry(fs, window_s, overlap_frac)?;
        for (i, s) in segs.iter_mut().enumerate() {
            let rates = &truth.resp_rate_hz[i * hop..i * hop + w];
            s.truth = Some(SegmentTruth { resp_rate_bpm: 60.0 * dsp::mean(rates), id_label: truth.id_label });
        }
    }
    Ok((bin, segs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{synth_radar_cube, Displacement, RadarConfig};

    fn matrix(cols: usize, mags: &[(usize, f64)]) -> RangeMatrix {
        let mut data = vec![Complex64::new(0.0, 0.0); 3 * cols];
        for r in 0..3 {
            for &(k, m) in mags {
                data[r * cols + k] = Complex64::new(m, 0.0);
            }
        }
        RangeMatrix { data, rows: 3, cols }
    }

    #[test]
    fn static_target_lands_in_bin_13() {
        let cfg = RadarConfig { samples_per_chirp: 64, chirps_per_frame: 2, ..RadarConfig::default() };
        let cube = synth_radar_cube(&Displacement::stationary(0.5, 8, 20.0), &cfg, 0.0, 1).unwrap();
        let rf = range_fft(&cube).unwrap();
        let bin = select_target_bin(&rf, 2, cfg.range_resolution()).unwrap();
        assert_eq!(bin.bin_index, 13);
    }

    #[test]
    fn zero_cube_gives_zero_matrix_and_no_target() {
        let cfg = RadarConfig { samples_per_chirp: 16, chirps_per_frame: 2, ..RadarConfig::default() };
        let cube = RadarCube::new(vec![Default::default(); 4 * 32], 4, cfg, None).unwrap();
        let rf = range_fft(&cube).unwrap();
        assert!(rf.data.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(select_target_bin(&rf, 2, 0.0375), Err(Error::NoTarget)));
    }

    #[test]
    fn tie_breaks_toward_smaller_bin() {
        let rf = matrix(16, &[(5, 2.0), (9, 2.0)]);
        assert_eq!(select_target_bin(&rf, 2, 1.0).unwrap().bin_index, 5);
    }

    #[test]
    fn dc_only_energy_is_no_target() {
        let rf = matrix(16, &[(0, 5.0)]);
        assert!(matches!(select_target_bin(&rf, 2, 1.0), Err(Error::NoTarget)));
    }

    #[test]
    fn phase_conventions() {
        assert_eq!(wrapped_angle(Complex64::new(1.0, 0.0)), 0.0);
        assert!((wrapped_angle(Complex64::new(0.0, 1.0)) - PI / 2.0).abs() < 1e-15);
        assert!((wrapped_angle(Complex64::new(-1.0, -1.0)) + 3.0 * PI / 4.0).abs() < 1e-15);
        assert_eq!(wrapped_angle(Complex64::new(0.0, 0.0)), 0.0);
        assert_eq!(wrapped_angle(Complex64::new(-1.0, -0.0)), PI);
    }

    #[test]
    fn unwrap_examples() {
        assert_eq!(unwrap_phase(&[0.0, 0.1, 0.2]), vec![0.0, 0.1, 0.2]);
        let u = unwrap_phase(&[3.0, -3.0]);
        assert_eq!(u[0], 3.0);
        assert!((u[1] - (2.0 * PI - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn segmentation_counts_and_starts() {
        let x = vec![0.0; 800];
        assert_eq!(segment(&x[..600], 20.0, 20.0, 0.5, "s").unwrap().len(), 2);
        let segs = segment(&x, 20.0, 20.0, 0.5, "s").unwrap();
        assert_eq!(segs.len(), 3);
        let starts: Vec<f64> = segs.iter().map(|s| s.start_time).collect();
        assert_eq!(starts, vec![0.0, 10.0, 20.0]);
        assert!(segment(&x[..380], 20.0, 20.0, 0.5, "s").is_err());
    }

    #[test]
    fn zero_overlap_partitions_prefix() {
        let x: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let segs = segment(&x, 20.0, 20.0, 0.0, "s").unwrap();
        assert_eq!(segs.len(), 2);
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.phase.clone()).collect();
        assert_eq!(joined, x[..800].to_vec());
    }
}
