//! On-disk formats.
//!
//! Series files (segments, decompositions, encrypted segments) share one
//! container: an 8-byte little-endian header length, a JSON header, then the
//! series as packed little-endian `f64`. Cubes are a JSON sidecar next to a raw
//! payload of interleaved little-endian `f32` I/Q. All writers go through
//! [`atomic_write`], so a failed command never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::{Complex32, Complex64};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::afd::{AfdParams, DecomposedSignal};
use crate::error::{Error, Result};
use crate::fpe::{EncryptedSegment, EncryptionKey};
use crate::preprocess::{PhaseSegment, SegmentTruth};
use crate::sim::{CubeTruth, RadarConfig, RadarCube};

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file, syncs it and renames it over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| Error::Format(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let res = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(res?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

fn check_format(found: &str, want: &str, version: u32) -> Result<()> {
    if found != want {
        return Err(Error::Format(format!("expected a {want} file, found {found}")));
    }
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {want} version {version}")));
    }
    Ok(())
}

fn encode_container<H: Serialize>(header: &H, series: &[&[f64]]) -> Result<Vec<u8>> {
    let h = serde_json::to_vec(header)?;
    let n: usize = series.iter().map(|s| s.len()).sum();
    let mut out = Vec::with_capacity(8 + h.len() + 8 * n);
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    for s in series {
        for v in *s {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn decode_container<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    let short = || Error::Format("file is truncated".into());
    let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().unwrap()) as usize;
    let end = 8usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(short)?;
    let header = serde_json::from_slice(&bytes[8..end])?;
    let body = &bytes[end..];
    if body.len() % 8 != 0 {
        return Err(Error::Format("payload is not a whole number of f64 values".into()));
    }
    let vals = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, vals))
}

#[derive(Deserialize)]
struct FormatTag {
    format: String,
}

/// The `format` tag of a series container (`segments`, `decomposition` or `encrypted`).
pub fn peek_format(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut len = [0u8; 8];
    std::io::Read::read_exact(&mut f, &mut len).map_err(|_| Error::Format(format!("{} is not a series file", path.display())))?;
    let n = u64::from_le_bytes(len);
    if n > 1 << 32 {
        return Err(Error::Format(format!("{} is not a series file", path.display())));
    }
    let mut h = vec![0u8; n as usize];
    std::io::Read::read_exact(&mut f, &mut h).map_err(|_| Error::Format("file is truncated".into()))?;
    let tag: FormatTag = serde_json::from_slice(&h).map_err(|_| Error::Format(format!("{} has no readable header", path.display())))?;
    Ok(tag.format)
}

/// Splits `vals` into consecutive runs of the given lengths, which must cover it exactly.
fn take_runs(vals: &[f64], lens: impl IntoIterator<Item = usize>) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    let mut at = 0;
    for n in lens {
        let end = at + n;
        if end > vals.len() {
            return Err(Error::Format("payload shorter than the header declares".into()));
        }
        out.push(vals[at..end].to_vec());
        at = end;
    }
    if at != vals.len() {
        return Err(Error::Format(format!("{} trailing payload values", vals.len() - at)));
    }
    Ok(out)
}

/// Provenance shared by every per-segment record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub source_id: String,
    pub segment_index: usize,
    pub start_time: f64,
    pub sample_rate: f64,
    pub len: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<SegmentTruth>,
}

impl SegmentMeta {
    pub fn of(seg: &PhaseSegment) -> Self {
        Self {
            source_id: seg.source_id.clone(),
            segment_index: seg.segment_index,
            start_time: seg.start_time,
            sample_rate: seg.sample_rate,
            len: seg.phase.len(),
            truth: seg.truth.clone(),
        }
    }
}

// ---- cubes

#[derive(Serialize, Deserialize)]
struct CubeSidecar {
    format: String,
    version: u32,
    frames: usize,
    config: RadarConfig,
    #[serde(default)]
    truth: Option<CubeTruth>,
}

/// `<cube>.json` next to the payload file.
pub fn cube_sidecar_path(payload: &Path) -> PathBuf {
    let mut s = payload.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_cube(path: &Path, cube: &RadarCube) -> Result<()> {
    let mut bytes = Vec::with_capacity(cube.iq.len() * 8);
    for c in &cube.iq {
        bytes.extend_from_slice(&c.re.to_le_bytes());
        bytes.extend_from_slice(&c.im.to_le_bytes());
    }
    let side = CubeSidecar { format: "cube".into(), version: FORMAT_VERSION, frames: cube.frames, config: cube.config, truth: cube.truth.clone() };
    atomic_write(path, &bytes)?;
    if let Err(e) = write_json(&cube_sidecar_path(path), &side) {
        let _ = fs::remove_file(path);
        return Err(e);
    }
    Ok(())
}

pub fn read_cube(path: &Path) -> Result<RadarCube> {
    let side: CubeSidecar = read_json(&cube_sidecar_path(path))?;
    check_format(&side.format, "cube", side.version)?;
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Format("cube payload is not whole I/Q pairs".into()));
    }
    let iq = bytes
        .chunks_exact(8)
        .map(|c| Complex32::new(f32::from_le_bytes(c[..4].try_into().unwrap()), f32::from_le_bytes(c[4..].try_into().unwrap())))
        .collect();
    RadarCube::new(iq, side.frames, side.config, side.truth)
}

// ---- segments

#[derive(Serialize, Deserialize)]
struct SegmentsHeader {
    format: String,
    version: u32,
    segments: Vec<SegmentMeta>,
}

pub fn encode_segments(segments: &[PhaseSegment]) -> Result<Vec<u8>> {
    let header = SegmentsHeader { format: "segments".into(), version: FORMAT_VERSION, segments: segments.iter().map(SegmentMeta::of).collect() };
    let series: Vec<&[f64]> = segments.iter().map(|s| s.phase.as_slice()).collect();
    encode_container(&header, &series)
}

pub fn decode_segments(bytes: &[u8]) -> Result<Vec<PhaseSegment>> {
    let (h, vals): (SegmentsHeader, _) = decode_container(bytes)?;
    check_format(&h.format, "segments", h.version)?;
    let runs = take_runs(&vals, h.segments.iter().map(|m| m.len))?;
    Ok(h.segments
        .into_iter()
        .zip(runs)
        .map(|(m, phase)| PhaseSegment {
            phase,
            sample_rate: m.sample_rate,
            start_time: m.start_time,
            source_id: m.source_id,
            segment_index: m.segment_index,
            truth: m.truth,
        })
        .collect())
}

pub fn write_segments(path: &Path, segments: &[PhaseSegment]) -> Result<()> {
    atomic_write(path, &encode_segments(segments)?)
}

pub fn read_segments(path: &Path) -> Result<Vec<PhaseSegment>> {
    decode_segments(&fs::read(path)?)
}

// ---- decompositions

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionMeta {
    #[serde(flatten)]
    pub segment: SegmentMeta,
    pub center_freqs_hz: Vec<f64>,
    pub mean: f64,
    pub vmd_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedRecord {
    pub meta: SegmentMeta,
    pub signal: DecomposedSignal,
}

#[derive(Serialize, Deserialize)]
struct DecompositionHeader {
    format: String,
    version: u32,
    params: AfdParams,
    components: Vec<String>,
    segments: Vec<DecompositionMeta>,
}

const DECOMP_COMPONENTS: [&str; 3] = ["x_ure", "x_pd", "x_ot"];

/// Only the three components are stored; VMD mode series come back empty.
pub fn write_decomposition(path: &Path, params: &AfdParams, records: &[DecomposedRecord]) -> Result<()> {
    let segments = records
        .iter()
        .map(|r| DecompositionMeta {
            segment: r.meta.clone(),
            center_freqs_hz: r.signal.modes.iter().map(|m| m.center_hz).collect(),
            mean: r.signal.mean,
            vmd_converged: r.signal.vmd_converged,
        })
        .collect();
    let header = DecompositionHeader {
        format: "decomposition".into(),
        version: FORMAT_VERSION,
        params: *params,
        components: DECOMP_COMPONENTS.iter().map(|s| s.to_string()).collect(),
        segments,
    };
    let mut series: Vec<&[f64]> = Vec::new();
    for r in records {
        if r.signal.len() != r.meta.len || r.signal.x_pd.len() != r.meta.len || r.signal.x_ot.len() != r.meta.len {
            return Err(Error::ShapeMismatch(format!("segment {} components differ in length", r.meta.segment_index)));
        }
        series.extend([r.signal.x_ure.as_slice(), &r.signal.x_pd, &r.signal.x_ot]);
    }
    atomic_write(path, &encode_container(&header, &series)?)
}

pub fn read_decomposition(path: &Path) -> Result<(AfdParams, Vec<DecomposedRecord>)> {
    let (h, vals): (DecompositionHeader, _) = decode_container(&fs::read(path)?)?;
    check_format(&h.format, "decomposition", h.version)?;
    let mut runs = take_runs(&vals, h.segments.iter().flat_map(|m| [m.segment.len; 3]))?.into_iter();
    let mut out = Vec::with_capacity(h.segments.len());
    for m in h.segments {
        let (x_ure, x_pd, x_ot) = (runs.next().unwrap(), runs.next().unwrap(), runs.next().unwrap());
        out.push(DecomposedRecord {
            meta: m.segment,
            signal: DecomposedSignal { x_ure, x_pd, x_ot, modes: Vec::new(), mean: m.mean, vmd_converged: m.vmd_converged },
        });
    }
    Ok((h.params, out))
}

// ---- encrypted segments

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedMeta {
    #[serde(flatten)]
    pub segment: SegmentMeta,
    pub alpha_f: f64,
    pub gamma_f: f64,
    pub dtw_score: f64,
    pub t_res: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedRecord {
    pub meta: SegmentMeta,
    pub enc: EncryptedSegment,
}

#[derive(Serialize, Deserialize)]
struct EncryptedHeader {
    format: String,
    version: u32,
    key_len: usize,
    epsilon_margin: usize,
    key_fingerprint: String,
    beta_amp: f64,
    beta_phase: f64,
    components: Vec<String>,
    segments: Vec<EncryptedMeta>,
}

const ENC_COMPONENTS: [&str; 5] = ["y", "x_ure", "analytic_re", "analytic_im", "x_ot_enc"];

pub fn write_encrypted(path: &Path, records: &[EncryptedRecord], beta_amp: f64, beta_phase: f64) -> Result<()> {
    let first = records.first().ok_or(Error::Empty("encrypted segments"))?;
    if records.iter().any(|r| r.enc.key_fingerprint != first.enc.key_fingerprint || r.enc.key_len != first.enc.key_len) {
        return Err(Error::Format("segments were encrypted with different keys".into()));
    }
    let mut parts: Vec<[Vec<f64>; 5]> = Vec::with_capacity(records.len());
    for r in records {
        let e = &r.enc;
        let n = r.meta.len;
        if [e.y.len(), e.x_ure.len(), e.analytic_enc.len(), e.x_ot_enc.len()].iter().any(|&l| l != n) {
            return Err(Error::ShapeMismatch(format!("segment {} components differ in length", r.meta.segment_index)));
        }
        parts.push([
            e.y.clone(),
            e.x_ure.clone(),
            e.analytic_enc.iter().map(|c| c.re).collect(),
            e.analytic_enc.iter().map(|c| c.im).collect(),
            e.x_ot_enc.clone(),
        ]);
    }
    let header = EncryptedHeader {
        format: "encrypted".into(),
        version: FORMAT_VERSION,
        key_len: first.enc.key_len,
        epsilon_margin: first.enc.epsilon_margin,
        key_fingerprint: first.enc.key_fingerprint.clone(),
        beta_amp,
        beta_phase,
        components: ENC_COMPONENTS.iter().map(|s| s.to_string()).collect(),
        segments: records
            .iter()
            .map(|r| EncryptedMeta { segment: r.meta.clone(), alpha_f: r.enc.alpha_f, gamma_f: r.enc.gamma_f, dtw_score: r.enc.dtw_score, t_res: r.enc.t_res })
            .collect(),
    };
    let series: Vec<&[f64]> = parts.iter().flat_map(|p| p.iter().map(|v| v.as_slice())).collect();
    atomic_write(path, &encode_container(&header, &series)?)
}

pub fn read_encrypted(path: &Path) -> Result<Vec<EncryptedRecord>> {
    let (h, vals): (EncryptedHeader, _) = decode_container(&fs::read(path)?)?;
    check_format(&h.format, "encrypted", h.version)?;
    let mut runs = take_runs(&vals, h.segments.iter().flat_map(|m| [m.segment.len; 5]))?.into_iter();
    let mut out = Vec::with_capacity(h.segments.len());
    for m in h.segments {
        let mut next = || runs.next().unwrap();
        let (y, x_ure, re, im, x_ot_enc) = (next(), next(), next(), next(), next());
        let enc = EncryptedSegment {
            y,
            x_ure,
            analytic_enc: re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect(),
            x_ot_enc,
            key_fingerprint: h.key_fingerprint.clone(),
            key_len: h.key_len,
            epsilon_margin: h.epsilon_margin,
            dtw_score: m.dtw_score,
            gamma_f: m.gamma_f,
            alpha_f: m.alpha_f,
            t_res: m.t_res,
            sample_rate: m.segment.sample_rate,
        };
        out.push(EncryptedRecord { meta: m.segment, enc });
    }
    Ok(out)
}

// ---- keys

pub fn read_key_hex(path: &Path) -> Result<EncryptionKey> {
    EncryptionKey::from_hex(fs::read_to_string(path)?.trim())
}

pub fn write_key_hex(path: &Path, key: &EncryptionKey) -> Result<()> {
    atomic_write(path, format!("{}\n", key.to_hex()).as_bytes())
}

// ---- rates

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub segment_index: usize,
    pub start_time_s: f64,
    pub rate_bpm: f64,
    pub truth_bpm: Option<f64>,
    pub peak_prominence: f64,
}

pub fn rates_csv(rows: &[RateRow]) -> String {
    let mut s = String::from("segment_index,start_time_s,rate_bpm,truth_bpm,peak_prominence\n");
    for r in rows {
        let truth = r.truth_bpm.map(|t| format!("{t:.4}")).unwrap_or_default();
        s.push_str(&format!("{},{:.4},{:.4},{},{:.4}\n", r.segment_index, r.start_time_s, r.rate_bpm, truth, r.peak_prominence));
    }
    s
}

pub fn write_rates_csv(path: &Path, rows: &[RateRow]) -> Result<()> {
    atomic_write(path, rates_csv(rows).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim;
    use tempfile::tempdir;

    fn seg(i: usize, n: usize) -> PhaseSegment {
        PhaseSegment {
            phase: (0..n).map(|k| (k as f64 * 0.1 + i as f64).sin()).collect(),
            sample_rate: 20.0,
            start_time: i as f64 * 10.0,
            source_id: "p".into(),
            segment_index: i,
            truth: Some(SegmentTruth { resp_rate_bpm: 15.0, id_label: Some(3) }),
        }
    }

    #[test]
    fn segments_round_trip() {
        let segs = vec![seg(0, 40), seg(1, 40), PhaseSegment { truth: None, ..seg(2, 7) }];
        assert_eq!(decode_segments(&encode_segments(&segs).unwrap()).unwrap(), segs);
        let mut bytes = encode_segments(&segs).unwrap();
        bytes.truncate(bytes.len() - 8);
        assert!(decode_segments(&bytes).is_err());
        assert!(decode_segments(&[1, 2]).is_err());
    }

    #[test]
    fn cube_round_trip_and_layout() {
        let d = tempdir().unwrap();
        let cfg = RadarConfig { samples_per_chirp: 4, chirps_per_frame: 2, ..RadarConfig::desk() };
        let iq: Vec<Complex32> = (0..16).map(|k| Complex32::new(k as f32, -(k as f32))).collect();
        let cube = RadarCube::new(iq, 2, cfg, None).unwrap();
        let p = d.path().join("c.bin");
        write_cube(&p, &cube).unwrap();
        let raw = fs::read(&p).unwrap();
        assert_eq!(raw.len(), 16 * 8);
        assert_eq!(f32::from_le_bytes(raw[8..12].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(raw[12..16].try_into().unwrap()), -1.0);
        assert_eq!(read_cube(&p).unwrap(), cube);
        assert!(cube_sidecar_path(&p).exists());
    }

    #[test]
    fn decomposition_and_encrypted_round_trip() {
        let d = tempdir().unwrap();
        let s = sim::PersonaProfile::pure(1, 0.25, 1e-3);
        let disp = sim::synth_displacement(&s, 40.0, 20.0, 1).unwrap();
        let segs: Vec<PhaseSegment> = (0..2)
            .map(|i| PhaseSegment { phase: disp.samples[i * 200..i * 200 + 400].iter().map(|v| v * 1e3).collect(), ..seg(i, 0) })
            .collect();
        let params = AfdParams::default();
        let recs: Vec<DecomposedRecord> = segs
            .iter()
            .map(|s| DecomposedRecord { meta: SegmentMeta::of(s), signal: crate::afd::decompose(s, &params).unwrap() })
            .collect();
        let p = d.path().join("x.decomp");
        write_decomposition(&p, &params, &recs).unwrap();
        let (pp, back) = read_decomposition(&p).unwrap();
        assert_eq!(pp, params);
        assert_eq!(back[1].signal.x_pd, recs[1].signal.x_pd);
        assert!(back[0].signal.modes.is_empty());

        let key = EncryptionKey::random(16, 2).unwrap();
        let pert = crate::fpe::PerturbationParams { epsilon_margin: 4, ..Default::default() };
        let encs: Vec<EncryptedRecord> = back
            .iter()
            .map(|r| EncryptedRecord { meta: r.meta.clone(), enc: crate::fpe::encrypt_segment(&r.signal, &key, &pert, 4.0, 20.0).unwrap() })
            .collect();
        let q = d.path().join("x.enc");
        write_encrypted(&q, &encs, 1.0, 1.0).unwrap();
        assert_eq!(read_encrypted(&q).unwrap(), encs);
        let text = String::from_utf8_lossy(&fs::read(&q).unwrap()).to_string();
        assert!(!text.contains(&key.to_hex()) || key.to_hex().len() < 8);
    }

    #[test]
    fn format_tags() {
        let d = tempdir().unwrap();
        let p = d.path().join("s.bin");
        write_segments(&p, &[seg(0, 10)]).unwrap();
        assert_eq!(peek_format(&p).unwrap(), "segments");
        let q = d.path().join("junk");
        fs::write(&q, b"hello world, not a container").unwrap();
        assert!(peek_format(&q).is_err());
    }

    #[test]
    fn atomic_write_leaves_no_temp() {
        let d = tempdir().unwrap();
        let p = d.path().join("a.txt");
        atomic_write(&p, b"one").unwrap();
        atomic_write(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
        assert!(atomic_write(&d.path().join("missing/a.txt"), b"x").is_err());
        assert_eq!(fs::read_dir(d.path()).unwrap().count(), 1);
    }

    #[test]
    fn rates_csv_blank_truth() {
        let rows = vec![
            RateRow { segment_index: 0, start_time_s: 0.0, rate_bpm: 15.12345, truth_bpm: Some(15.0), peak_prominence: 3.0 },
            RateRow { segment_index: 1, start_time_s: 10.0, rate_bpm: 16.0, truth_bpm: None, peak_prominence: 2.5 },
        ];
        assert_eq!(
            rates_csv(&rows),
            "segment_index,start_time_s,rate_bpm,truth_bpm,peak_prominence\n0,0.0000,15.1235,15.0000,3.0000\n1,10.0000,16.0000,,2.5000\n"
        );
    }
}
