//! Seeded batches of clean and attack runs producing the train/test/
//! calibration datasets, with CSV persistence and a plain-text metadata
//! file.
//!
//! The whole dataset is a pure function of [`CampaignConfig`]: per-run seeds
//! derive from the master seed through documented stream ids (train 0,
//! test-clean 1, test-attack 2, calibration-clean 3, calibration-attack 4),
//! runs execute in any order (optionally in parallel) and are emitted
//! sorted by run index.
//!
//! Output files in `out_dir`:
//!
//! * `train.csv` — clean runs only (the semi-supervised premise),
//! * `test_pct{p}.csv` — one balanced test set per payload percentage,
//! * `calib_pct{p}.csv` — a small labeled set (50 + 50) for feature
//!   ranking,
//! * `metadata.txt` — config echo, calibration results and corpus stats.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::emu::{self, ExitStatus, HpcVector, RunResult};
use crate::isa::AsmOptions;
use crate::util::{self, streams};
use crate::workloads::{
    self, build_workload, Calibration, WorkloadError, WorkloadName, WorkloadSpec,
};

/// Normative CSV header, exact order.
pub const CSV_HEADER: &str = "workload,run_index,seed,label,payload_pct,instr_executed,\
load_hazards,loads,stores,jumps,branches_total,branches_taken,compressed,exit_status,\
payload_executed";

pub const DESK_RUNS: u64 = 2000;
pub const FULL_RUNS: u64 = 10_000;
const CALIB_RUNS_PER_LABEL: u64 = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Clean,
    Attack,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Clean => "clean",
            Label::Attack => "attack",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "clean" => Some(Label::Clean),
            "attack" => Some(Label::Attack),
            _ => None,
        }
    }
}

/// One execution in a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub workload: WorkloadName,
    pub run_index: u64,
    pub seed: u64,
    pub label: Label,
    /// Requested payload percentage; 0 for clean runs.
    pub payload_pct: f64,
    pub hpc: HpcVector,
    pub exit_status: ExitStatus,
    pub payload_executed: bool,
}

impl RunRecord {
    pub fn to_csv_row(&self) -> String {
        let h = &self.hpc;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.workload,
            self.run_index,
            self.seed,
            self.label.as_str(),
            self.payload_pct,
            h.instr_executed,
            h.load_hazards,
            h.loads,
            h.stores,
            h.jumps,
            h.branches_total,
            h.branches_taken,
            h.compressed,
            self.exit_status.as_str(),
            self.payload_executed,
        )
    }
}

#[derive(Debug, Clone)]
pub struct CampaignConfig {
    pub workload: WorkloadName,
    pub n_train_clean: u64,
    /// Balanced test set size per payload percentage; must be even.
    pub n_test: u64,
    pub payload_pcts: Vec<f64>,
    pub master_seed: u64,
    pub compress: bool,
    pub step_limit: u64,
    pub out_dir: PathBuf,
}

impl CampaignConfig {
    pub fn desk(workload: WorkloadName, out_dir: PathBuf) -> Self {
        CampaignConfig {
            workload,
            n_train_clean: DESK_RUNS,
            n_test: DESK_RUNS,
            payload_pcts: vec![0.5, 1.0, 2.0, 5.0],
            master_seed: 1,
            compress: true,
            step_limit: emu::DEFAULT_STEP_LIMIT,
            out_dir,
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        if self.n_test % 2 != 0 {
            return Err(CampaignError::UnbalancedTestSet { n_test: self.n_test });
        }
        if self.payload_pcts.is_empty() || self.payload_pcts.iter().any(|&p| p <= 0.0) {
            return Err(CampaignError::BadPayloadPcts(self.payload_pcts.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("n_test = {n_test} is odd; the test set must be balanced")]
    UnbalancedTestSet { n_test: u64 },
    #[error("payload percentages must be positive, got {0:?}")]
    BadPayloadPcts(Vec<f64>),
    #[error(
        "label soundness violated: {workload} run {run_index} (seed {seed}) has label \
         {label} but payload_executed = {payload_executed}; the exploit or generator is broken"
    )]
    LabelSoundness {
        workload: WorkloadName,
        run_index: u64,
        seed: u64,
        label: &'static str,
        payload_executed: bool,
    },
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("empty dataset file")]
    Empty,
    #[error("header mismatch: expected `{CSV_HEADER}`, found `{found}`")]
    HeaderMismatch { found: String },
    #[error("line {line}: expected 15 fields, found {found}")]
    FieldCount { line: u32, found: usize },
    #[error("line {line}: bad {field} value `{value}`")]
    BadField { line: u32, field: &'static str, value: String },
    #[error("line {line}: counter invariant violated: {msg}")]
    CounterInvariant { line: u32, msg: String },
    #[error("line {line}: label/payload consistency violated: {msg}")]
    LabelInvariant { line: u32, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Serializes records to the normative CSV text.
pub fn dataset_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_row());
        out.push('\n');
    }
    out
}

/// Parses CSV text into records, enforcing the header, field syntax, the
/// counter algebra and the label/payload invariants. Accepts LF and CRLF.
pub fn dataset_from_csv(text: &str) -> Result<Vec<RunRecord>, DatasetError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| ((i + 1) as u32, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or(DatasetError::Empty)?;
    if header != CSV_HEADER {
        return Err(DatasetError::HeaderMismatch { found: header.to_string() });
    }
    let mut records = Vec::new();
    for (line, raw) in lines {
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 15 {
            return Err(DatasetError::FieldCount { line, found: fields.len() });
        }
        let bad = |field: &'static str, value: &str| DatasetError::BadField {
            line,
            field,
            value: value.to_string(),
        };
        let workload =
            WorkloadName::parse(fields[0]).ok_or_else(|| bad("workload", fields[0]))?;
        let run_index = fields[1].parse().map_err(|_| bad("run_index", fields[1]))?;
        let seed = fields[2].parse().map_err(|_| bad("seed", fields[2]))?;
        let label = Label::parse(fields[3]).ok_or_else(|| bad("label", fields[3]))?;
        let payload_pct: f64 = fields[4].parse().map_err(|_| bad("payload_pct", fields[4]))?;
        if !payload_pct.is_finite() || payload_pct < 0.0 {
            return Err(bad("payload_pct", fields[4]));
        }
        let counter = |idx: usize, field: &'static str| -> Result<u64, DatasetError> {
            fields[idx].parse().map_err(|_| bad(field, fields[idx]))
        };
        let hpc = HpcVector {
            instr_executed: counter(5, "instr_executed")?,
            load_hazards: counter(6, "load_hazards")?,
            loads: counter(7, "loads")?,
            stores: counter(8, "stores")?,
            jumps: counter(9, "jumps")?,
            branches_total: counter(10, "branches_total")?,
            branches_taken: counter(11, "branches_taken")?,
            compressed: counter(12, "compressed")?,
        };
        hpc.check_invariants().map_err(|msg| DatasetError::CounterInvariant { line, msg })?;
        let exit_status =
            ExitStatus::parse(fields[13]).ok_or_else(|| bad("exit_status", fields[13]))?;
        let payload_executed = match fields[14] {
            "true" => true,
            "false" => false,
            other => return Err(bad("payload_executed", other)),
        };
        let attack = label == Label::Attack;
        if attack != payload_executed {
            return Err(DatasetError::LabelInvariant {
                line,
                msg: format!("label {} with payload_executed {payload_executed}", label.as_str()),
            });
        }
        if attack != (payload_pct > 0.0) {
            return Err(DatasetError::LabelInvariant {
                line,
                msg: format!("label {} with payload_pct {payload_pct}", label.as_str()),
            });
        }
        records.push(RunRecord {
            workload,
            run_index,
            seed,
            label,
            payload_pct,
            hpc,
            exit_status,
            payload_executed,
        });
    }
    Ok(records)
}

pub fn save_dataset(records: &[RunRecord], path: &Path) -> Result<(), DatasetError> {
    std::fs::write(path, dataset_to_csv(records))
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })
}

pub fn load_dataset(path: &Path) -> Result<Vec<RunRecord>, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    dataset_from_csv(&text)
}

/// Everything `run_campaign` produced, for callers that keep working in
/// memory.
#[derive(Debug)]
pub struct CampaignOutput {
    pub train: Vec<RunRecord>,
    /// `(pct, test records, calibration records, calibration)` per
    /// requested percentage.
    pub per_pct: Vec<(f64, Vec<RunRecord>, Vec<RunRecord>, Calibration)>,
    pub metadata: String,
}

/// Runs the full campaign and writes the dataset files. `jobs = 0` uses all
/// cores; output is identical for any jobs value.
pub fn run_campaign(config: &CampaignConfig, jobs: usize) -> Result<CampaignOutput, CampaignError> {
    config.validate()?;
    let output = generate_campaign(config, jobs)?;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| CampaignError::Io { path: dir.clone(), source })?;
    let write = |name: String, records: &[RunRecord]| -> Result<(), CampaignError> {
        let path = dir.join(name);
        save_dataset(records, &path).map_err(|e| match e {
            DatasetError::Io { path, source } => CampaignError::Io { path, source },
            other => unreachable!("save_dataset only fails on io: {other}"),
        })
    };
    write("train.csv".to_string(), &output.train)?;
    for (pct, test, calib, _) in &output.per_pct {
        write(format!("test_pct{pct}.csv"), test)?;
        write(format!("calib_pct{pct}.csv"), calib)?;
    }
    let meta_path = dir.join("metadata.txt");
    std::fs::write(&meta_path, &output.metadata)
        .map_err(|source| CampaignError::Io { path: meta_path, source })?;
    Ok(output)
}

/// In-memory campaign generation (no filesystem writes).
pub fn generate_campaign(
    config: &CampaignConfig,
    jobs: usize,
) -> Result<CampaignOutput, CampaignError> {
    config.validate()?;
    let name = config.workload;
    let spec = WorkloadSpec::new(name);
    let program = build_workload(name, AsmOptions { compress: config.compress });

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool construction");

    let clean_run = |stream: u64, index: u64, pct_zero: f64| -> Result<RunRecord, CampaignError> {
        let seed = util::derive_seed(config.master_seed, stream, index);
        let r = workloads::run_clean(&spec, &program, seed, config.step_limit)?;
        record_from(name, index, seed, Label::Clean, pct_zero, &r)
    };
    let attack_run = |stream: u64,
                      index: u64,
                      cal: &Calibration|
     -> Result<RunRecord, CampaignError> {
        let seed = util::derive_seed(config.master_seed, stream, index);
        let input = workloads::craft_attack_input(&spec, &program, &cal.params, seed)?;
        let r = emu::run(&program, &input, config.step_limit).map_err(WorkloadError::Emu)?;
        record_from(name, index, seed, Label::Attack, cal.params.pct, &r)
    };

    let train: Vec<RunRecord> = pool.install(|| {
        (0..config.n_train_clean)
            .into_par_iter()
            .map(|i| clean_run(streams::TRAIN, i, 0.0))
            .collect::<Result<_, _>>()
    })?;

    let mut per_pct = Vec::new();
    for &pct in &config.payload_pcts {
        let cal = workloads::calibrate(&spec, &program, pct, config.master_seed)?;
        let half = config.n_test / 2;
        let test: Vec<RunRecord> = pool.install(|| {
            (0..config.n_test)
                .into_par_iter()
                .map(|i| {
                    if i < half {
                        clean_run(streams::TEST_CLEAN, i, 0.0)
                    } else {
                        attack_run(streams::TEST_ATTACK, i, &cal)
                    }
                })
                .collect::<Result<_, _>>()
        })?;
        let calib: Vec<RunRecord> = pool.install(|| {
            (0..2 * CALIB_RUNS_PER_LABEL)
                .into_par_iter()
                .map(|i| {
                    if i < CALIB_RUNS_PER_LABEL {
                        clean_run(streams::CALIB_CLEAN, i, 0.0)
                    } else {
                        attack_run(streams::CALIB_ATTACK, i, &cal)
                    }
                })
                .collect::<Result<_, _>>()
        })?;
        per_pct.push((pct, test, calib, cal));
    }

    let metadata = render_metadata(config, &train, &per_pct);
    Ok(CampaignOutput { train, per_pct, metadata })
}

fn record_from(
    workload: WorkloadName,
    run_index: u64,
    seed: u64,
    label: Label,
    payload_pct: f64,
    r: &emu::RunResult,
) -> Result<RunRecord, CampaignError> {
    check_label_soundness(workload, run_index, seed, label, r)?;
    Ok(RunRecord {
        workload,
        run_index,
        seed,
        label,
        payload_pct,
        hpc: r.hpc,
        exit_status: r.exit_status,
        payload_executed: r.payload_executed,
    })
}

/// Ground truth comes from the emulator, never from the generator's
/// intent; a mismatch means the exploit or generator is broken and the
/// whole campaign aborts.
fn check_label_soundness(
    workload: WorkloadName,
    run_index: u64,
    seed: u64,
    label: Label,
    r: &RunResult,
) -> Result<(), CampaignError> {
    let expected = label == Label::Attack;
    if r.payload_executed != expected {
        return Err(CampaignError::LabelSoundness {
            workload,
            run_index,
            seed,
            label: label.as_str(),
            payload_executed: r.payload_executed,
        });
    }
    Ok(())
}

fn render_metadata(
    config: &CampaignConfig,
    train: &[RunRecord],
    per_pct: &[(f64, Vec<RunRecord>, Vec<RunRecord>, Calibration)],
) -> String {
    let mut out = String::new();
    out.push_str("# campaign metadata\n");
    let _ = writeln!(out, "workload = {}", config.workload);
    let _ = writeln!(out, "n_train_clean = {}", config.n_train_clean);
    let _ = writeln!(out, "n_test = {}", config.n_test);
    let pcts: Vec<String> = config.payload_pcts.iter().map(|p| p.to_string()).collect();
    let _ = writeln!(out, "payload_pcts = {}", pcts.join(","));
    let _ = writeln!(out, "master_seed = {}", config.master_seed);
    let _ = writeln!(out, "compress = {}", config.compress);
    let _ = writeln!(out, "step_limit = {}", config.step_limit);
    let _ = writeln!(out, "train.rows = {}", train.len());
    let _ = writeln!(out, "train.instr_median = {}", median_instr(train));
    for (pct, test, calib, cal) in per_pct {
        let _ = writeln!(out, "calibration.pct{pct}.k = {}", cal.params.k);
        let _ = writeln!(out, "calibration.pct{pct}.a = {}", cal.params.a);
        let _ = writeln!(out, "calibration.pct{pct}.b = {}", cal.params.b);
        let _ = writeln!(out, "calibration.pct{pct}.baseline_instret = {}", cal.baseline_instret);
        if let Some(w) = &cal.warning {
            let _ = writeln!(out, "calibration.pct{pct}.warning = {w}");
        }
        let attacks = test.iter().filter(|r| r.label == Label::Attack).count();
        let _ = writeln!(out, "test.pct{pct}.rows = {}", test.len());
        let _ = writeln!(out, "test.pct{pct}.attack_rows = {attacks}");
        let _ = writeln!(out, "test.pct{pct}.instr_median = {}", median_instr(test));
        let _ = writeln!(out, "calib.pct{pct}.rows = {}", calib.len());
    }
    out
}

fn median_instr(records: &[RunRecord]) -> u64 {
    if records.is_empty() {
        return 0;
    }
    let v: Vec<u64> = records.iter().map(|r| r.hpc.instr_executed).collect();
    util::median_u64(&v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> CampaignConfig {
        CampaignConfig {
            workload: WorkloadName::Aes,
            n_train_clean: 30,
            n_test: 20,
            payload_pcts: vec![1.0],
            master_seed: 7,
            compress: true,
            step_limit: emu::DEFAULT_STEP_LIMIT,
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn campaign_is_deterministic_and_balanced() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let a = run_campaign(&cfg, 1).unwrap();
        let b = run_campaign(&cfg, 2).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.per_pct[0].1, b.per_pct[0].1);
        assert_eq!(a.metadata, b.metadata);

        let (_, test, _, _) = &a.per_pct[0];
        let attacks = test.iter().filter(|r| r.label == Label::Attack).count();
        assert_eq!(attacks, 10);
        assert_eq!(test.len(), 20);
        assert!(a.train.iter().all(|r| r.label == Label::Clean && !r.payload_executed));
        assert!(a.train.iter().all(|r| r.payload_pct == 0.0));
    }

    #[test]
    fn campaign_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let out = run_campaign(&cfg, 0).unwrap();
        let train = load_dataset(&dir.path().join("train.csv")).unwrap();
        assert_eq!(train, out.train);
        let test = load_dataset(&dir.path().join("test_pct1.csv")).unwrap();
        assert_eq!(test, out.per_pct[0].1);
        let calib = load_dataset(&dir.path().join("calib_pct1.csv")).unwrap();
        assert_eq!(calib.len(), 100);
        assert!(dir.path().join("metadata.txt").exists());
    }

    #[test]
    fn csv_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.n_train_clean = 3;
        cfg.n_test = 2;
        let out = generate_campaign(&cfg, 1).unwrap();
        let text = dataset_to_csv(&out.train);
        assert_eq!(dataset_from_csv(&text).unwrap(), out.train);
    }

    #[test]
    fn crlf_and_lf_parse_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.n_train_clean = 3;
        cfg.n_test = 2;
        let out = generate_campaign(&cfg, 1).unwrap();
        let lf = dataset_to_csv(&out.train);
        let crlf = lf.replace('\n', "\r\n");
        assert_eq!(dataset_from_csv(&lf).unwrap(), dataset_from_csv(&crlf).unwrap());
    }

    #[test]
    fn counter_invariant_rejected_on_load() {
        let text = format!(
            "{CSV_HEADER}\naes,0,1,clean,0,10,0,0,0,0,5,6,0,clean_exit,false\n"
        );
        let err = dataset_from_csv(&text).unwrap_err();
        assert!(matches!(err, DatasetError::CounterInvariant { line: 2, .. }), "{err}");
    }

    #[test]
    fn header_and_field_errors_name_lines() {
        assert!(matches!(
            dataset_from_csv("nonsense\n").unwrap_err(),
            DatasetError::HeaderMismatch { .. }
        ));
        let text = format!("{CSV_HEADER}\naes,0,1,clean,0,10\n");
        assert!(matches!(
            dataset_from_csv(&text).unwrap_err(),
            DatasetError::FieldCount { line: 2, found: 6 }
        ));
        let text = format!(
            "{CSV_HEADER}\naes,0,1,sneaky,0,10,0,0,0,0,5,4,0,clean_exit,false\n"
        );
        assert!(matches!(
            dataset_from_csv(&text).unwrap_err(),
            DatasetError::BadField { line: 2, field: "label", .. }
        ));
    }

    #[test]
    fn label_payload_consistency_rejected_on_load() {
        let text = format!(
            "{CSV_HEADER}\naes,0,1,attack,1,10,0,0,0,0,5,4,0,clean_exit,false\n"
        );
        assert!(matches!(
            dataset_from_csv(&text).unwrap_err(),
            DatasetError::LabelInvariant { line: 2, .. }
        ));
        let text = format!(
            "{CSV_HEADER}\naes,0,1,clean,2,10,0,0,0,0,5,4,0,clean_exit,false\n"
        );
        assert!(dataset_from_csv(&text).is_err());
    }

    #[test]
    fn odd_test_count_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.n_test = 21;
        assert!(matches!(
            run_campaign(&cfg, 1).unwrap_err(),
            CampaignError::UnbalancedTestSet { n_test: 21 }
        ));
    }
}
