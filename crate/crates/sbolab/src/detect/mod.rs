//! Semi-supervised anomaly detection: standardization, feature ranking,
//! four one-class classifiers and the autoencoder path. Every fit consumes
//! clean-labeled data only; attack rows in a training set are an error.
//!
//! A fitted [`Detector`] bundles the scaler, the selected feature indices,
//! the optional autoencoder and the core model, so classifying a raw
//! counter vector is self-contained. Modes:
//!
//! * `raw` — the core model works on standardized selected features;
//! * `ae_latent` — the core model works on the autoencoder's bottleneck
//!   code of those features;
//! * `ae_recon` — no core model; anomaly iff the reconstruction error
//!   exceeds the autoencoder's threshold.

pub mod autoencoder;
pub mod elliptic;
pub mod iforest;
pub mod lof;
pub mod model_io;
pub mod ocsvm;
pub mod rank;
pub mod scaler;

use thiserror::Error;

use crate::campaign::{Label, RunRecord};
pub use autoencoder::{fit_autoencoder, AeHyper, AutoencoderModel};
pub use elliptic::{fit_elliptic, EllipticModel};
pub use iforest::{fit_iforest, IForestModel};
pub use lof::{fit_lof, LofModel};
pub use model_io::{detector_from_text, detector_to_text};
pub use ocsvm::{fit_ocsvm, OcSvmModel};
pub use rank::{rank_features, RankMethod};
pub use scaler::{apply_scaler, apply_scaler_matrix, fit_scaler, ScalerParams};

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("nu = {nu} is infeasible for {n} training points")]
    NuInfeasible { nu: f64, n: usize },
    #[error("dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(
        "semi-supervised discipline violated: training row {row} is labeled attack \
         (payload_executed = {payload_executed})"
    )]
    SemiSupervised { row: usize, payload_executed: bool },
    #[error("training loss went non-finite; lower the learning rate or check the data")]
    NonFiniteLoss,
    #[error("feature index {index} out of range for {dims} features")]
    BadFeatureIndex { index: usize, dims: usize },
    #[error("the probe ranking method needs a labeled calibration set")]
    NeedsCalibration,
    #[error("calibration set must contain both labels")]
    MissingLabels,
    #[error("mode {mode} requires a fitted autoencoder")]
    NeedsAe { mode: &'static str },
    #[error("model file: {0}")]
    ModelFormat(String),
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DetectorKind {
    OcSvm,
    Lof,
    IForest,
    Elliptic,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 4] =
        [DetectorKind::OcSvm, DetectorKind::Lof, DetectorKind::IForest, DetectorKind::Elliptic];

    pub fn as_str(&self) -> &'static str {
        match self {
            DetectorKind::OcSvm => "ocsvm",
            DetectorKind::Lof => "lof",
            DetectorKind::IForest => "iforest",
            DetectorKind::Elliptic => "elliptic",
        }
    }

    pub fn parse(s: &str) -> Option<DetectorKind> {
        DetectorKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Raw,
    AeLatent,
    AeRecon,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::AeLatent => "ae_latent",
            Mode::AeRecon => "ae_recon",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "raw" => Some(Mode::Raw),
            "ae_latent" => Some(Mode::AeLatent),
            "ae_recon" => Some(Mode::AeRecon),
            _ => None,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Hyperparameters for all detectors: the widely used defaults, all
/// overridable through configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub nu: f64,
    /// RBF width; `None` means 1/d.
    pub gamma: Option<f64>,
    pub lof_k: usize,
    pub lof_quantile: f64,
    pub n_trees: usize,
    /// Isolation forest subsample; `None` means min(256, n).
    pub psi: Option<usize>,
    pub contamination: f64,
    /// MCD subset size; `None` means floor((n + d + 1) / 2).
    pub mcd_h: Option<usize>,
    pub ae: AeHyper,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            nu: 0.05,
            gamma: None,
            lof_k: 20,
            lof_quantile: 0.95,
            n_trees: 100,
            psi: None,
            contamination: 0.05,
            mcd_h: None,
            ae: AeHyper::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CoreModel {
    OcSvm(OcSvmModel),
    Lof(LofModel),
    IForest(IForestModel),
    Elliptic(EllipticModel),
}

impl CoreModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            CoreModel::OcSvm(_) => DetectorKind::OcSvm,
            CoreModel::Lof(_) => DetectorKind::Lof,
            CoreModel::IForest(_) => DetectorKind::IForest,
            CoreModel::Elliptic(_) => DetectorKind::Elliptic,
        }
    }

    /// Kind-specific score of an already scaled (and possibly encoded)
    /// vector.
    pub fn score(&self, x: &[f64]) -> Result<f64, DetectError> {
        match self {
            CoreModel::OcSvm(m) => ocsvm::score(m, x),
            CoreModel::Lof(m) => lof::score(m, x),
            CoreModel::IForest(m) => iforest::score(m, x),
            CoreModel::Elliptic(m) => elliptic::score(m, x),
        }
    }

    pub fn is_anomaly(&self, x: &[f64]) -> Result<bool, DetectError> {
        match self {
            CoreModel::OcSvm(m) => ocsvm::is_anomaly(m, x),
            CoreModel::Lof(m) => lof::is_anomaly(m, x),
            CoreModel::IForest(m) => iforest::is_anomaly(m, x),
            CoreModel::Elliptic(m) => elliptic::is_anomaly(m, x),
        }
    }
}

/// A complete fitted detection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub mode: Mode,
    /// Raw counter indices consumed, in ranked order.
    pub features: Vec<usize>,
    pub scaler: ScalerParams,
    pub ae: Option<AutoencoderModel>,
    /// `None` only in `ae_recon` mode.
    pub core: Option<CoreModel>,
}

impl Detector {
    pub fn kind_str(&self) -> &'static str {
        match (&self.core, self.mode) {
            (Some(core), _) => core.kind().as_str(),
            (None, Mode::AeRecon) => "ae_recon",
            (None, _) => "none",
        }
    }

    fn select(&self, hpc: &[f64; 8]) -> Vec<f64> {
        self.features.iter().map(|&i| hpc[i]).collect()
    }

    /// Scaled (and, in latent mode, encoded) representation a core model
    /// consumes.
    fn transform(&self, hpc: &[f64; 8]) -> Result<Vec<f64>, DetectError> {
        let scaled = apply_scaler(&self.scaler, &self.select(hpc));
        match self.mode {
            Mode::Raw => Ok(scaled),
            Mode::AeLatent => {
                let ae = self.ae.as_ref().ok_or(DetectError::NeedsAe { mode: "ae_latent" })?;
                ae.encode(&scaled)
            }
            Mode::AeRecon => Ok(scaled),
        }
    }

    /// Kind-specific anomaly score of a raw 8-counter vector.
    pub fn score(&self, hpc: &[f64; 8]) -> Result<f64, DetectError> {
        match self.mode {
            Mode::AeRecon => {
                let ae = self.ae.as_ref().ok_or(DetectError::NeedsAe { mode: "ae_recon" })?;
                ae.recon_error(&self.transform(hpc)?)
            }
            _ => {
                let x = self.transform(hpc)?;
                self.core
                    .as_ref()
                    .expect("core model present outside ae_recon")
                    .score(&x)
            }
        }
    }

    /// True iff the vector is classified as an anomaly (attack).
    pub fn is_anomaly(&self, hpc: &[f64; 8]) -> Result<bool, DetectError> {
        match self.mode {
            Mode::AeRecon => {
                let ae = self.ae.as_ref().ok_or(DetectError::NeedsAe { mode: "ae_recon" })?;
                ae.is_anomaly(&self.transform(hpc)?)
            }
            _ => {
                let x = self.transform(hpc)?;
                self.core
                    .as_ref()
                    .expect("core model present outside ae_recon")
                    .is_anomaly(&x)
            }
        }
    }
}

/// Rejects datasets containing attack rows and extracts the selected raw
/// feature columns.
pub fn clean_feature_matrix(
    records: &[RunRecord],
    features: &[usize],
) -> Result<Vec<Vec<f64>>, DetectError> {
    for (i, r) in records.iter().enumerate() {
        if r.label == Label::Attack || r.payload_executed {
            return Err(DetectError::SemiSupervised {
                row: i,
                payload_executed: r.payload_executed,
            });
        }
    }
    feature_matrix(records, features)
}

/// Selected raw feature columns of any dataset (no label check).
pub fn feature_matrix(
    records: &[RunRecord],
    features: &[usize],
) -> Result<Vec<Vec<f64>>, DetectError> {
    for &f in features {
        if f >= 8 {
            return Err(DetectError::BadFeatureIndex { index: f, dims: 8 });
        }
    }
    Ok(records
        .iter()
        .map(|r| {
            let all = r.hpc.as_features();
            features.iter().map(|&f| all[f]).collect()
        })
        .collect())
}

/// Fits a full pipeline on clean training records.
///
/// `kind` is ignored (and may be `None`) in `ae_recon` mode.
pub fn fit_detector(
    train: &[RunRecord],
    kind: Option<DetectorKind>,
    mode: Mode,
    features: &[usize],
    hyper: &Hyper,
) -> Result<Detector, DetectError> {
    let raw = clean_feature_matrix(train, features)?;
    fit_detector_on_matrix(&raw, kind, mode, features, hyper)
}

/// Same as [`fit_detector`] but on a pre-extracted clean feature matrix
/// whose columns correspond to `features`.
pub fn fit_detector_on_matrix(
    raw: &[Vec<f64>],
    kind: Option<DetectorKind>,
    mode: Mode,
    features: &[usize],
    hyper: &Hyper,
) -> Result<Detector, DetectError> {
    let scaler = fit_scaler(raw)?;
    let scaled = apply_scaler_matrix(&scaler, raw);

    let ae = match mode {
        Mode::Raw => None,
        Mode::AeLatent | Mode::AeRecon => {
            Some(fit_autoencoder(&scaled, None, hyper.ae)?)
        }
    };

    let core = match mode {
        Mode::AeRecon => None,
        _ => {
            let input: Vec<Vec<f64>> = match (&ae, mode) {
                (Some(model), Mode::AeLatent) => scaled
                    .iter()
                    .map(|row| model.encode(row))
                    .collect::<Result<_, _>>()?,
                _ => scaled.clone(),
            };
            let kind = kind.expect("detector kind required outside ae_recon");
            Some(match kind {
                DetectorKind::OcSvm => {
                    CoreModel::OcSvm(fit_ocsvm(&input, hyper.nu, hyper.gamma)?)
                }
                DetectorKind::Lof => {
                    CoreModel::Lof(fit_lof(&input, hyper.lof_k, hyper.lof_quantile)?)
                }
                DetectorKind::IForest => CoreModel::IForest(fit_iforest(
                    &input,
                    hyper.n_trees,
                    hyper.psi,
                    hyper.seed,
                    hyper.contamination,
                )?),
                DetectorKind::Elliptic => CoreModel::Elliptic(fit_elliptic(
                    &input,
                    hyper.mcd_h,
                    hyper.contamination,
                    hyper.seed,
                )?),
            })
        }
    };

    Ok(Detector { mode, features: features.to_vec(), scaler, ae, core })
}
