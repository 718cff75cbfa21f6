//! Report emission: CSV, JSON and a plain-text table, byte-stable across runs.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{atomic_write, write_json};

use super::metrics::MetricsReport;

pub const CSV_HEADER: &str = "distance_m,pattern,duration_s,seed,n_samples,mae_bpm,std_bpm,irac";

fn sorted(reports: &[MetricsReport]) -> Vec<&MetricsReport> {
    let mut v: Vec<&MetricsReport> = reports.iter().collect();
    v.sort_by_key(|r| r.scenario.key());
    v
}

pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in sorted(reports) {
        let sc = &r.scenario;
        s.push_str(&format!(
            "{:.4},{},{:.4},{},{},{:.4},{:.4},{:.4}\n",
            sc.distance_m, sc.pattern, sc.duration_s, sc.seed, r.n_samples, r.mae_bpm, r.std_bpm, r.irac
        ));
    }
    s
}

pub fn reports_text(reports: &[MetricsReport]) -> String {
    let mut s = format!(
        "{:>10}  {:<10} {:>10} {:>6} {:>6} {:>10} {:>10} {:>8}\n",
        "distance_m", "pattern", "duration_s", "seed", "n", "mae_bpm", "std_bpm", "irac"
    );
    for r in sorted(reports) {
        let sc = &r.scenario;
        s.push_str(&format!(
            "{:>10.4}  {:<10} {:>10.4} {:>6} {:>6} {:>10.4} {:>10.4} {:>8.4}\n",
            sc.distance_m,
            sc.pattern.as_str(),
            sc.duration_s,
            sc.seed,
            r.n_samples,
            r.mae_bpm,
            r.std_bpm,
            r.irac
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub text: PathBuf,
}

/// Writes `report.csv`, `report.json` and `report.txt` into `dir`.
pub fn emit_reports(reports: &[MetricsReport], dir: &Path) -> Result<ReportPaths> {
    if reports.is_empty() {
        return Err(Error::Empty("reports"));
    }
    std::fs::create_dir_all(dir)?;
    let paths = ReportPaths { csv: dir.join("report.csv"), json: dir.join("report.json"), text: dir.join("report.txt") };
    let ordered: Vec<&MetricsReport> = sorted(reports);
    atomic_write(&paths.csv, reports_csv(reports).as_bytes())?;
    write_json(&paths.json, &ordered)?;
    atomic_write(&paths.text, reports_text(reports).as_bytes())?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversary::ConfusionMatrix;
    use crate::harness::cohort::Pattern;
    use crate::harness::metrics::Scenario;

    fn rep(d: f64, mae: f64) -> MetricsReport {
        MetricsReport {
            scenario: Scenario { distance_m: d, pattern: Pattern::Deep, duration_s: 20.0, seed: 4 },
            mae_bpm: mae,
            std_bpm: 0.25,
            irac: 1.0 / 3.0,
            cdf_points: vec![(0.1, 0.5), (0.2, 1.0)],
            confusion: ConfusionMatrix::from_predictions(&[1, 2, 2], &[1, 2, 1]).unwrap(),
            n_samples: 3,
        }
    }

    #[test]
    fn one_report_one_row() {
        let csv = reports_csv(&[rep(0.5, 1.23456)]);
        assert_eq!(csv, format!("{CSV_HEADER}\n0.5000,deep,20.0000,4,3,1.2346,0.2500,0.3333\n"));
    }

    #[test]
    fn emission_is_sorted_stable_and_round_trips() {
        let d = tempfile::tempdir().unwrap();
        let rs = vec![rep(1.5, 1.0), rep(0.5, 2.0)];
        let p = emit_reports(&rs, d.path()).unwrap();
        let first = std::fs::read(&p.csv).unwrap();
        let json1 = std::fs::read(&p.json).unwrap();
        emit_reports(&[rs[1].clone(), rs[0].clone()], d.path()).unwrap();
        assert_eq!(std::fs::read(&p.csv).unwrap(), first);
        assert_eq!(std::fs::read(&p.json).unwrap(), json1);
        assert!(String::from_utf8(first).unwrap().lines().nth(1).unwrap().starts_with("0.5000"));
        let back: Vec<MetricsReport> = serde_json::from_slice(&json1).unwrap();
        assert_eq!(back[1].confusion, rs[0].confusion);
        assert!(std::fs::read_to_string(&p.text).unwrap().contains("deep"));
        assert!(emit_reports(&[], d.path()).is_err());
    }
}
