//! The payload-size x feature-count x detector sweep over campaign
//! datasets.
//!
//! For each (workload, payload percentage): features are ranked once, then
//! every (mode, feature count) slice fits the four one-class detectors on
//! the clean training data and evaluates them on the matching balanced
//! test set. Cells are independent; with `jobs > 1` they run concurrently
//! and the report is assembled in deterministic key order afterwards.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use thiserror::Error;

use super::{evaluate, EvalCell, EvalError, EvalReport};
use crate::campaign::{load_dataset, Label, RunRecord};
use crate::detect::{
    clean_feature_matrix, feature_matrix, fit_detector_on_matrix, rank_features, DetectError,
    DetectorKind, Hyper, Mode, RankMethod,
};
use crate::util::fnv1a;
use crate::workloads::WorkloadName;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    /// Root directory holding one campaign output directory per workload
    /// (`<data_dir>/<workload>/train.csv` and friends).
    pub data_dir: PathBuf,
    pub workloads: Vec<WorkloadName>,
    pub payload_pcts: Vec<f64>,
    pub detectors: Vec<DetectorKind>,
    pub modes: Vec<Mode>,
    pub n_features: Vec<usize>,
    pub rank_method: RankMethod,
    pub hyper: Hyper,
    pub jobs: usize,
}

impl SweepConfig {
    pub fn desk(data_dir: PathBuf) -> Self {
        SweepConfig {
            data_dir,
            workloads: WorkloadName::ALL.to_vec(),
            payload_pcts: vec![0.5, 1.0, 2.0, 5.0],
            detectors: DetectorKind::ALL.to_vec(),
            modes: vec![Mode::Raw, Mode::AeLatent],
            n_features: (1..=8).collect(),
            rank_method: RankMethod::SingleFeatureProbe,
            hyper: Hyper::default(),
            jobs: 0,
        }
    }

    /// Stable hash of the sweep parameters, recorded in the report
    /// metadata.
    pub fn config_hash(&self) -> u64 {
        fnv1a(self.render_canonical().as_bytes())
    }

    fn render_canonical(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = write!(s, "data_dir={};", self.data_dir.display());
        for w in &self.workloads {
            let _ = write!(s, "w={w};");
        }
        for p in &self.payload_pcts {
            let _ = write!(s, "p={p};");
        }
        for d in &self.detectors {
            let _ = write!(s, "d={d};");
        }
        for m in &self.modes {
            let _ = write!(s, "m={m};");
        }
        for n in &self.n_features {
            let _ = write!(s, "n={n};");
        }
        let h = &self.hyper;
        let _ = write!(
            s,
            "rank={};nu={};gamma={:?};k={};q={};trees={};psi={:?};cont={};h={:?};\
             ae={},{},{},{};seed={}",
            self.rank_method.as_str(),
            h.nu,
            h.gamma,
            h.lof_k,
            h.lof_quantile,
            h.n_trees,
            h.psi,
            h.contamination,
            h.mcd_h,
            h.ae.epochs,
            h.ae.learning_rate,
            h.ae.batch_size,
            h.ae.seed,
            h.seed,
        );
        s
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("missing dataset file {path}: {source}")]
    MissingDataset { path: PathBuf, source: Box<crate::campaign::DatasetError> },
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

struct PctData {
    workload: WorkloadName,
    pct: f64,
    train: Vec<RunRecord>,
    test: Vec<RunRecord>,
    /// Feature indices in ranked order.
    ranking: Vec<usize>,
}

pub fn sweep(config: &SweepConfig) -> Result<EvalReport, SweepError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .expect("thread pool construction");

    let all_features: Vec<usize> = (0..8).collect();
    let mut groups: Vec<PctData> = Vec::new();
    for &workload in &config.workloads {
        let dir = config.data_dir.join(workload.as_str());
        let load = |name: String| -> Result<Vec<RunRecord>, SweepError> {
            let path = dir.join(name);
            load_dataset(&path)
                .map_err(|source| SweepError::MissingDataset { path, source: Box::new(source) })
        };
        let train = load("train.csv".to_string())?;
        for &pct in &config.payload_pcts {
            let test = load(format!("test_pct{pct}.csv"))?;
            let ranking = match config.rank_method {
                RankMethod::Dispersion => {
                    let matrix = clean_feature_matrix(&train, &all_features)?;
                    rank_features(&matrix, None, RankMethod::Dispersion)?
                }
                RankMethod::SingleFeatureProbe => {
                    let calib = load(format!("calib_pct{pct}.csv"))?;
                    let matrix = clean_feature_matrix(&train, &all_features)?;
                    let calib_matrix = feature_matrix(&calib, &all_features)?;
                    let labels: Vec<bool> =
                        calib.iter().map(|r| r.label == Label::Attack).collect();
                    rank_features(
                        &matrix,
                        Some((&calib_matrix, &labels)),
                        RankMethod::SingleFeatureProbe,
                    )?
                }
            };
            groups.push(PctData { workload, pct, train: train.clone(), test, ranking });
        }
    }

    // One task per (group, mode, n_features): the scaler and autoencoder
    // are shared by the detectors inside.
    struct Task<'a> {
        group: &'a PctData,
        mode: Mode,
        n_features: usize,
    }
    let mut tasks = Vec::new();
    for group in &groups {
        for &mode in &config.modes {
            for &nf in &config.n_features {
                if nf == 0 || nf > 8 {
                    continue;
                }
                tasks.push(Task { group, mode, n_features: nf });
            }
        }
    }

    let cells: Result<Vec<Vec<EvalCell>>, SweepError> = pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let g = task.group;
                let selected: Vec<usize> = g.ranking[..task.n_features].to_vec();
                let train_matrix = clean_feature_matrix(&g.train, &selected)?;
                let mut out = Vec::with_capacity(config.detectors.len());
                for &kind in &config.detectors {
                    let det = fit_detector_on_matrix(
                        &train_matrix,
                        Some(kind),
                        task.mode,
                        &selected,
                        &config.hyper,
                    )?;
                    let confusion = evaluate(&det, &g.test)?;
                    out.push(EvalCell {
                        workload: g.workload,
                        detector: kind.as_str().to_string(),
                        mode: task.mode,
                        payload_pct: g.pct,
                        n_features: task.n_features,
                        confusion,
                    });
                }
                Ok(out)
            })
            .collect()
    });

    let mut report = EvalReport {
        cells: cells?.into_iter().flatten().collect(),
        metadata: BTreeMap::new(),
    };
    report.sort();
    report
        .metadata
        .insert("config_hash".into(), format!("{:016x}", config.config_hash()));
    report.metadata.insert("rank_method".into(), config.rank_method.as_str().into());
    report.metadata.insert("detector_seed".into(), config.hyper.seed.to_string());
    report.metadata.insert("data_dir".into(), config.data_dir.display().to_string());
    Ok(report)
}
