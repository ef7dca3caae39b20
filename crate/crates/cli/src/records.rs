//! The records table: one row per perturbation sample.

use std::path::Path;

use reglab::geneq::{fit_regularity, usable_records, PerturbationRecord, RegularityFit};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const HEADER: [&str; 7] = [
    "sample_index",
    "seed",
    "magnitude",
    "weak_image_dist",
    "weak_domain_dist",
    "strong_image_dist",
    "solver_converged",
];

/// Scientific notation with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn records_csv(seed: u64, records: &[PerturbationRecord]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(HEADER)?;
    for r in records {
        w.write_record([
            r.sample_index.to_string(),
            seed.to_string(),
            fmt_real(r.magnitude),
            fmt_real(r.weak_image_dist),
            fmt_real(r.weak_domain_dist),
            fmt_real(r.strong_image_dist),
            r.solver_converged.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

#[derive(Debug, Deserialize)]
struct Row {
    sample_index: u64,
    #[allow(dead_code)]
    seed: u64,
    magnitude: f64,
    weak_image_dist: f64,
    weak_domain_dist: f64,
    strong_image_dist: f64,
    solver_converged: bool,
}

pub fn read_records(path: &Path) -> Result<Vec<PerturbationRecord>, CliError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| CliError::Records(format!("{}: {e}", path.display())))?;
    let header = r
        .headers()
        .map_err(|e| CliError::Records(e.to_string()))?
        .clone();
    if header.iter().ne(HEADER) {
        return Err(CliError::Records(format!(
            "unexpected header {:?}, expected {}",
            header.iter().collect::<Vec<_>>(),
            HEADER.join(",")
        )));
    }
    r.deserialize::<Row>()
        .map(|row| {
            let row = row.map_err(|e| CliError::Records(e.to_string()))?;
            Ok(PerturbationRecord {
                sample_index: row.sample_index,
                magnitude: row.magnitude,
                weak_image_dist: row.weak_image_dist,
                weak_domain_dist: row.weak_domain_dist,
                strong_image_dist: row.strong_image_dist,
                solver_converged: row.solver_converged,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub kappa: f64,
    pub kappa_regression: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub range: (f64, f64),
}

impl From<RegularityFit> for FitSummary {
    fn from(f: RegularityFit) -> Self {
        Self {
            kappa: f.kappa,
            kappa_regression: f.kappa_regression,
            beta: f.beta,
            r_squared: f.r_squared,
            n_points: f.n_points,
            range: f.range,
        }
    }
}

/// Fit with a specific message when `min_dist` excludes every converged
/// record.
pub fn fit_records(records: &[PerturbationRecord], min_dist: f64) -> Result<FitSummary, CliError> {
    let converged = records.iter().filter(|r| r.solver_converged).count();
    if converged > 0 && usable_records(records, min_dist).is_empty() {
        return Err(CliError::Fit(format!(
            "min_dist {min_dist:e} is above every recorded distance"
        )));
    }
    fit_regularity(records, min_dist)
        .map(FitSummary::from)
        .map_err(|e| CliError::Fit(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_csv() {
        let recs: Vec<PerturbationRecord> = (0..6)
            .map(|i| PerturbationRecord {
                sample_index: i,
                magnitude: 10f64.powi(-(i as i32)),
                weak_image_dist: 0.1 / (i + 1) as f64,
                weak_domain_dist: if i == 5 { f64::NAN } else { 1.0 / 3.0 },
                strong_image_dist: 2.0,
                solver_converged: i != 5,
            })
            .collect();
        let bytes = records_csv(9, &recs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        std::fs::write(&path, &bytes).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 6);
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.sample_index, b.sample_index);
            assert_eq!(a.weak_image_dist, b.weak_image_dist);
            assert!(a.weak_domain_dist == b.weak_domain_dist || a.weak_domain_dist.is_nan() && b.weak_domain_dist.is_nan());
        }
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("sample_index,seed,magnitude,"));
        assert!(text.contains("3.3333333333333331e-1"));
    }
}
