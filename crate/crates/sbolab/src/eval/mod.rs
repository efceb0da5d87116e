//! Detection metrics and reports for the payload-size x feature-count
//! sweeps.

pub mod svg;
pub mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::campaign::{Label, RunRecord};
use crate::detect::{Detector, Mode};
use crate::workloads::WorkloadName;

pub use svg::render_report;
pub use sweep::{sweep, SweepConfig};

/// Normative report header, exact order.
pub const REPORT_HEADER: &str =
    "workload,detector,mode,payload_pct,n_features,tp,fp,tn,fn,accuracy,tpr,fpr,precision";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty test set")]
    EmptyTestSet,
    #[error(transparent)]
    Detect(#[from] crate::detect::DetectError),
    #[error("report: {0}")]
    ReportFormat(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Confusion matrix with attack as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn tpr(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> f64 {
        ratio(self.fp, self.fp + self.tn)
    }

    /// Precision; 0 when nothing was flagged.
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// One sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCell {
    pub workload: WorkloadName,
    /// Detector name (`ocsvm`, `lof`, `iforest`, `elliptic`, `ae_recon`).
    pub detector: String,
    pub mode: Mode,
    pub payload_pct: f64,
    pub n_features: usize,
    pub confusion: Confusion,
}

impl EvalCell {
    pub fn accuracy(&self) -> f64 {
        self.confusion.accuracy()
    }

    fn to_csv_row(&self) -> String {
        let c = &self.confusion;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.workload,
            self.detector,
            self.mode,
            self.payload_pct,
            self.n_features,
            c.tp,
            c.fp,
            c.tn,
            c.fn_,
            c.accuracy(),
            c.tpr(),
            c.fpr(),
            c.precision(),
        )
    }
}

/// Full sweep output: cells in deterministic key order plus run metadata
/// (seeds, config hash).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub cells: Vec<EvalCell>,
    pub metadata: BTreeMap<String, String>,
}

/// Scores every test row against the fitted detector and fills the
/// confusion matrix. Every row lands in exactly one cell.
pub fn evaluate(detector: &Detector, test: &[RunRecord]) -> Result<Confusion, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut c = Confusion::default();
    for row in test {
        let flagged = detector.is_anomaly(&row.hpc.as_features())?;
        match (row.label == Label::Attack, flagged) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    debug_assert_eq!(c.total() as usize, test.len());
    Ok(c)
}

impl EvalReport {
    /// Deterministic ordering by (workload, detector, mode, pct,
    /// n_features).
    pub fn sort(&mut self) {
        self.cells.sort_by(|a, b| {
            a.workload
                .cmp(&b.workload)
                .then(a.detector.cmp(&b.detector))
                .then(a.mode.cmp(&b.mode))
                .then(a.payload_pct.partial_cmp(&b.payload_pct).unwrap())
                .then(a.n_features.cmp(&b.n_features))
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for cell in &self.cells {
            out.push_str(&cell.to_csv_row());
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<EvalReport, EvalError> {
        let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
        let header = lines.next().ok_or_else(|| EvalError::ReportFormat("empty".into()))?;
        if header != REPORT_HEADER {
            return Err(EvalError::ReportFormat(format!("bad header `{header}`")));
        }
        let mut cells = Vec::new();
        for (idx, raw) in lines.enumerate() {
            let line = idx + 2;
            if raw.is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split(',').collect();
            if f.len() != 13 {
                return Err(EvalError::ReportFormat(format!(
                    "line {line}: expected 13 fields, found {}",
                    f.len()
                )));
            }
            let bad = |what: &str| EvalError::ReportFormat(format!("line {line}: bad {what}"));
            let workload = WorkloadName::parse(f[0]).ok_or_else(|| bad("workload"))?;
            let mode = Mode::parse(f[2]).ok_or_else(|| bad("mode"))?;
            let payload_pct: f64 = f[3].parse().map_err(|_| bad("payload_pct"))?;
            if !payload_pct.is_finite() || payload_pct <= 0.0 {
                return Err(bad("payload_pct"));
            }
            let n_features: usize = f[4].parse().map_err(|_| bad("n_features"))?;
            let confusion = Confusion {
                tp: f[5].parse().map_err(|_| bad("tp"))?,
                fp: f[6].parse().map_err(|_| bad("fp"))?,
                tn: f[7].parse().map_err(|_| bad("tn"))?,
                fn_: f[8].parse().map_err(|_| bad("fn"))?,
            };
            if confusion.total() == 0 {
                return Err(bad("confusion matrix (all zero)"));
            }
            // the derived columns must agree with the counts
            let acc: f64 = f[9].parse().map_err(|_| bad("accuracy"))?;
            if (acc - confusion.accuracy()).abs() > 1e-9 {
                return Err(bad("accuracy (inconsistent with counts)"));
            }
            cells.push(EvalCell {
                workload,
                detector: f[1].to_string(),
                mode,
                payload_pct,
                n_features,
                confusion,
            });
        }
        Ok(EvalReport { cells, metadata: BTreeMap::new() })
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv())
            .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
    }

    pub fn load_csv(path: &Path) -> Result<EvalReport, EvalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| EvalError::Io { path: path.to_path_buf(), source })?;
        EvalReport::from_csv(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_arithmetic() {
        // tp 90, fn 10, tn 80, fp 20 -> accuracy 0.85, precision 90/110
        let c = Confusion { tp: 90, fn_: 10, tn: 80, fp: 20 };
        assert_eq!(c.accuracy(), 0.85);
        assert_eq!(c.precision(), 90.0 / 110.0);
        assert_eq!(c.tpr(), 0.9);
        assert_eq!(c.fpr(), 0.2);
    }

    #[test]
    fn degenerate_classifiers() {
        // flag everything on a balanced set
        let all = Confusion { tp: 100, fp: 100, tn: 0, fn_: 0 };
        assert_eq!(all.tpr(), 1.0);
        assert_eq!(all.fpr(), 1.0);
        assert_eq!(all.accuracy(), 0.5);
        // perfect detector
        let perfect = Confusion { tp: 100, fp: 0, tn: 100, fn_: 0 };
        assert_eq!(perfect.accuracy(), 1.0);
        assert_eq!(perfect.fpr(), 0.0);
    }

    #[test]
    fn balanced_accuracy_identity() {
        let c = Confusion { tp: 73, fn_: 27, tn: 91, fp: 9 };
        let balanced = (c.tpr() + (1.0 - c.fpr())) / 2.0;
        assert!((c.accuracy() - balanced).abs() < 1e-12);
    }

    #[test]
    fn report_csv_round_trip() {
        let report = EvalReport {
            cells: vec![EvalCell {
                workload: WorkloadName::Aes,
                detector: "lof".into(),
                mode: Mode::Raw,
                payload_pct: 1.0,
                n_features: 8,
                confusion: Confusion { tp: 100, fp: 5, tn: 95, fn_: 0 },
            }],
            metadata: BTreeMap::new(),
        };
        let text = report.to_csv();
        assert!(text.starts_with(REPORT_HEADER));
        assert_eq!(text.lines().count(), 2);
        let back = EvalReport::from_csv(&text).unwrap();
        assert_eq!(back.cells, report.cells);
    }

    #[test]
    fn report_rejects_inconsistent_rows() {
        let text = format!("{REPORT_HEADER}\naes,lof,raw,1,8,100,5,95,0,0.5,1,0.05,0.95\n");
        assert!(EvalReport::from_csv(&text).is_err());
    }
}
