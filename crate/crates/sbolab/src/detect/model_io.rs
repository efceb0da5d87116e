//! Self-describing text serialization for fitted detectors.
//!
//! The format is `key = value` lines (the shared config grammar): a format
//! tag, kind/mode/features, the scaler, then kind-specific sections.
//! Floats are written with 17 significant digits and round-trip exactly,
//! so a reloaded model scores identically.

use std::fmt::Write as _;

use super::{
    AeHyper, AutoencoderModel, CoreModel, DetectError, Detector, EllipticModel, IForestModel,
    LofModel, Mode, OcSvmModel, ScalerParams,
};
use crate::config::KvConfig;
use crate::detect::iforest::IsoNode;
use crate::util::fmt_f64;

const FORMAT_TAG: &str = "sbolab-model-v1";

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

fn fmt_matrix(rows: &[Vec<f64>]) -> String {
    rows.iter().flat_map(|r| r.iter()).map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

pub fn detector_to_text(det: &Detector) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format = {FORMAT_TAG}");
    let _ = writeln!(out, "kind = {}", det.kind_str());
    let _ = writeln!(out, "mode = {}", det.mode);
    let feats: Vec<String> = det.features.iter().map(|f| f.to_string()).collect();
    let _ = writeln!(out, "features = {}", feats.join(","));
    let _ = writeln!(out, "scaler.mean = {}", fmt_vec(&det.scaler.mean));
    let _ = writeln!(out, "scaler.std = {}", fmt_vec(&det.scaler.std));
    let flags: Vec<&str> =
        det.scaler.constant.iter().map(|&c| if c { "1" } else { "0" }).collect();
    let _ = writeln!(out, "scaler.constant = {}", flags.join(" "));

    if let Some(ae) = &det.ae {
        let sizes: Vec<String> = ae.sizes.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "ae.sizes = {}", sizes.join(" "));
        let _ = writeln!(out, "ae.epochs = {}", ae.hyper.epochs);
        let _ = writeln!(out, "ae.learning_rate = {}", fmt_f64(ae.hyper.learning_rate));
        let _ = writeln!(out, "ae.batch_size = {}", ae.hyper.batch_size);
        let _ = writeln!(out, "ae.seed = {}", ae.hyper.seed);
        let _ = writeln!(out, "ae.final_loss = {}", fmt_f64(ae.final_loss));
        let _ = writeln!(out, "ae.recon_threshold = {}", fmt_f64(ae.recon_threshold));
        for (l, (w, b)) in ae.weights.iter().zip(&ae.biases).enumerate() {
            let _ = writeln!(out, "ae.w{l} = {}", fmt_vec(w));
            let _ = writeln!(out, "ae.b{l} = {}", fmt_vec(b));
        }
    }

    match &det.core {
        None => {}
        Some(CoreModel::OcSvm(m)) => {
            let _ = writeln!(out, "ocsvm.nu = {}", fmt_f64(m.nu));
            let _ = writeln!(out, "ocsvm.gamma = {}", fmt_f64(m.gamma));
            let _ = writeln!(out, "ocsvm.rho = {}", fmt_f64(m.rho));
            let _ = writeln!(out, "ocsvm.dim = {}", m.support_vectors[0].len());
            let _ = writeln!(out, "ocsvm.alphas = {}", fmt_vec(&m.alphas));
            let _ = writeln!(out, "ocsvm.sv = {}", fmt_matrix(&m.support_vectors));
        }
        Some(CoreModel::Lof(m)) => {
            let _ = writeln!(out, "lof.k = {}", m.k);
            let _ = writeln!(out, "lof.quantile = {}", fmt_f64(m.quantile));
            let _ = writeln!(out, "lof.threshold = {}", fmt_f64(m.threshold));
            let _ = writeln!(out, "lof.dim = {}", m.points[0].len());
            let _ = writeln!(out, "lof.points = {}", fmt_matrix(&m.points));
            let _ = writeln!(out, "lof.k_dist = {}", fmt_vec(&m.k_dist));
            let _ = writeln!(out, "lof.lrd = {}", fmt_vec(&m.lrd));
            let _ = writeln!(out, "lof.train_scores = {}", fmt_vec(&m.train_scores));
        }
        Some(CoreModel::IForest(m)) => {
            let _ = writeln!(out, "iforest.psi = {}", m.psi);
            let _ = writeln!(out, "iforest.n_trees = {}", m.n_trees);
            let _ = writeln!(out, "iforest.contamination = {}", fmt_f64(m.contamination));
            let _ = writeln!(out, "iforest.seed = {}", m.seed);
            let _ = writeln!(out, "iforest.c_psi = {}", fmt_f64(m.c_psi));
            let _ = writeln!(out, "iforest.threshold = {}", fmt_f64(m.threshold));
            for (t, nodes) in m.trees.iter().enumerate() {
                let txt: Vec<String> = nodes
                    .iter()
                    .map(|n| match n {
                        IsoNode::Split { feature, value, left, right } => {
                            format!("S {feature} {} {left} {right}", fmt_f64(*value))
                        }
                        IsoNode::External { size } => format!("E {size}"),
                    })
                    .collect();
                let _ = writeln!(out, "iforest.tree{t} = {}", txt.join(" ; "));
            }
        }
        Some(CoreModel::Elliptic(m)) => {
            let _ = writeln!(out, "elliptic.h = {}", m.h);
            let _ = writeln!(out, "elliptic.contamination = {}", fmt_f64(m.contamination));
            let _ = writeln!(out, "elliptic.threshold = {}", fmt_f64(m.threshold));
            let _ = writeln!(out, "elliptic.ridge_applied = {}", m.ridge_applied);
            let _ = writeln!(out, "elliptic.location = {}", fmt_vec(&m.location));
            let _ = writeln!(out, "elliptic.precision = {}", fmt_matrix(&m.precision));
        }
    }
    out
}

struct Reader {
    kv: KvConfig,
}

impl Reader {
    fn req(&self, key: &str) -> Result<&str, DetectError> {
        self.kv.get(key).ok_or_else(|| DetectError::ModelFormat(format!("missing key `{key}`")))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, DetectError> {
        self.req(key)?
            .parse()
            .map_err(|_| DetectError::ModelFormat(format!("bad numeric value for `{key}`")))
    }

    fn f64_vec(&self, key: &str) -> Result<Vec<f64>, DetectError> {
        self.req(key)?
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| DetectError::ModelFormat(format!("bad float in `{key}`")))
            })
            .collect()
    }

    fn f64_matrix(&self, key: &str, rows: usize, cols: usize) -> Result<Vec<Vec<f64>>, DetectError> {
        let flat = self.f64_vec(key)?;
        if rows.checked_mul(cols).map(|n| n != flat.len()).unwrap_or(true) {
            return Err(DetectError::ModelFormat(format!(
                "`{key}` holds {} values, expected {rows} x {cols}",
                flat.len()
            )));
        }
        Ok(flat.chunks(cols).map(|c| c.to_vec()).collect())
    }
}

pub fn detector_from_text(text: &str) -> Result<Detector, DetectError> {
    let kv = KvConfig::parse(text).map_err(|e| DetectError::ModelFormat(e.to_string()))?;
    let r = Reader { kv };
    if r.req("format")? != FORMAT_TAG {
        return Err(DetectError::ModelFormat(format!(
            "unsupported format tag `{}`",
            r.req("format")?
        )));
    }
    let mode = Mode::parse(r.req("mode")?)
        .ok_or_else(|| DetectError::ModelFormat("bad mode".into()))?;
    let kind_str = r.req("kind")?.to_string();
    let features: Vec<usize> = r
        .req("features")?
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| DetectError::ModelFormat("bad feature index".into()))
        })
        .collect::<Result<_, _>>()?;
    if features.is_empty() || features.iter().any(|&f| f >= 8) {
        return Err(DetectError::ModelFormat("feature indices must be in 0..8".into()));
    }
    let d = features.len();

    let mean = r.f64_vec("scaler.mean")?;
    let std = r.f64_vec("scaler.std")?;
    let constant: Vec<bool> = r
        .req("scaler.constant")?
        .split_whitespace()
        .map(|t| match t {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(DetectError::ModelFormat("bad scaler.constant flag".into())),
        })
        .collect::<Result<_, _>>()?;
    if mean.len() != d || std.len() != d || constant.len() != d {
        return Err(DetectError::ModelFormat("scaler width must match features".into()));
    }
    if std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(DetectError::ModelFormat("scaler.std entries must be positive".into()));
    }
    let scaler = ScalerParams { mean, std, constant };

    let ae = if mode == Mode::Raw {
        None
    } else {
        let sizes: Vec<usize> = r
            .req("ae.sizes")?
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>().map_err(|_| DetectError::ModelFormat("bad ae.sizes".into()))
            })
            .collect::<Result<_, _>>()?;
        if sizes.len() < 3
            || sizes.len() % 2 == 0
            || sizes[0] != d
            || sizes[0] != *sizes.last().unwrap()
            || sizes.iter().any(|&s| s == 0 || s > 4096)
        {
            return Err(DetectError::ModelFormat("inconsistent ae.sizes".into()));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..sizes.len() - 1 {
            let w = r.f64_vec(&format!("ae.w{l}"))?;
            if w.len() != sizes[l] * sizes[l + 1] {
                return Err(DetectError::ModelFormat(format!("ae.w{l} has the wrong size")));
            }
            let b = r.f64_vec(&format!("ae.b{l}"))?;
            if b.len() != sizes[l + 1] {
                return Err(DetectError::ModelFormat(format!("ae.b{l} has the wrong size")));
            }
            weights.push(w);
            biases.push(b);
        }
        Some(AutoencoderModel {
            sizes,
            weights,
            biases,
            hyper: AeHyper {
                epochs: r.num("ae.epochs")?,
                learning_rate: r.num("ae.learning_rate")?,
                batch_size: r.num("ae.batch_size")?,
                seed: r.num("ae.seed")?,
            },
            final_loss: r.num("ae.final_loss")?,
            recon_threshold: r.num("ae.recon_threshold")?,
        })
    };

    let core_dim = if mode == Mode::AeLatent {
        ae.as_ref().map(|m| m.sizes[m.sizes.len() / 2]).unwrap_or(d)
    } else {
        d
    };

    let core = match kind_str.as_str() {
        "ae_recon" | "none" => {
            if mode != Mode::AeRecon {
                return Err(DetectError::ModelFormat("missing core model".into()));
            }
            None
        }
        "ocsvm" => {
            let dim: usize = r.num("ocsvm.dim")?;
            if dim != core_dim {
                return Err(DetectError::ModelFormat("ocsvm.dim inconsistent with mode".into()));
            }
            let alphas = r.f64_vec("ocsvm.alphas")?;
            if alphas.is_empty() {
                return Err(DetectError::ModelFormat("ocsvm.alphas empty".into()));
            }
            let sv = r.f64_matrix("ocsvm.sv", alphas.len(), dim)?;
            Some(CoreModel::OcSvm(OcSvmModel {
                gamma: r.num("ocsvm.gamma")?,
                nu: r.num("ocsvm.nu")?,
                rho: r.num("ocsvm.rho")?,
                support_vectors: sv,
                alphas,
            }))
        }
        "lof" => {
            let k: usize = r.num("lof.k")?;
            let dim: usize = r.num("lof.dim")?;
            if dim != core_dim {
                return Err(DetectError::ModelFormat("lof.dim inconsistent with mode".into()));
            }
            let k_dist = r.f64_vec("lof.k_dist")?;
            let n = k_dist.len();
            if n <= k || k == 0 {
                return Err(DetectError::ModelFormat("lof needs more points than k".into()));
            }
            let points = r.f64_matrix("lof.points", n, dim)?;
            let lrd = r.f64_vec("lof.lrd")?;
            let train_scores = r.f64_vec("lof.train_scores")?;
            if lrd.len() != n || train_scores.len() != n {
                return Err(DetectError::ModelFormat("lof vector lengths differ".into()));
            }
            Some(CoreModel::Lof(LofModel {
                k,
                quantile: r.num("lof.quantile")?,
                points,
                k_dist,
                lrd,
                train_scores,
                threshold: r.num("lof.threshold")?,
            }))
        }
        "iforest" => {
            let n_trees: usize = r.num("iforest.n_trees")?;
            if n_trees == 0 || n_trees > 10_000 {
                return Err(DetectError::ModelFormat("iforest.n_trees out of range".into()));
            }
            let mut trees = Vec::with_capacity(n_trees);
            for t in 0..n_trees {
                trees.push(parse_tree(r.req(&format!("iforest.tree{t}"))?, core_dim)?);
            }
            Some(CoreModel::IForest(IForestModel {
                trees,
                psi: r.num("iforest.psi")?,
                n_trees,
                contamination: r.num("iforest.contamination")?,
                seed: r.num("iforest.seed")?,
                c_psi: r.num("iforest.c_psi")?,
                threshold: r.num("iforest.threshold")?,
            }))
        }
        "elliptic" => {
            let location = r.f64_vec("elliptic.location")?;
            if location.len() != core_dim {
                return Err(DetectError::ModelFormat("elliptic.location has wrong width".into()));
            }
            let precision = r.f64_matrix("elliptic.precision", core_dim, core_dim)?;
            Some(CoreModel::Elliptic(EllipticModel {
                location,
                precision,
                threshold: r.num("elliptic.threshold")?,
                h: r.num("elliptic.h")?,
                contamination: r.num("elliptic.contamination")?,
                ridge_applied: r.req("elliptic.ridge_applied")? == "true",
            }))
        }
        other => {
            return Err(DetectError::ModelFormat(format!("unknown kind `{other}`")));
        }
    };

    if matches!(mode, Mode::AeRecon) && core.is_some() {
        return Err(DetectError::ModelFormat("ae_recon carries no core model".into()));
    }

    Ok(Detector { mode, features, scaler, ae, core })
}

fn parse_tree(text: &str, dims: usize) -> Result<Vec<IsoNode>, DetectError> {
    let bad = |msg: &str| DetectError::ModelFormat(format!("iforest tree: {msg}"));
    let mut nodes = Vec::new();
    for part in text.split(';') {
        let toks: Vec<&str> = part.split_whitespace().collect();
        match toks.as_slice() {
            ["E", size] => {
                let size = size.parse().map_err(|_| bad("bad external size"))?;
                nodes.push(IsoNode::External { size });
            }
            ["S", feature, value, left, right] => {
                let feature: usize = feature.parse().map_err(|_| bad("bad feature"))?;
                if feature >= dims {
                    return Err(bad("feature out of range"));
                }
                nodes.push(IsoNode::Split {
                    feature,
                    value: value.parse().map_err(|_| bad("bad split value"))?,
                    left: left.parse().map_err(|_| bad("bad left index"))?,
                    right: right.parse().map_err(|_| bad("bad right index"))?,
                });
            }
            _ => return Err(bad("bad node syntax")),
        }
    }
    // Child indices must stay inside the node list and point forward, so
    // scoring cannot loop.
    for (i, n) in nodes.iter().enumerate() {
        if let IsoNode::Split { left, right, .. } = n {
            let (l, rr) = (*left as usize, *right as usize);
            if l <= i || rr <= i || l >= nodes.len() || rr >= nodes.len() {
                return Err(bad("child indices must point forward"));
            }
        }
    }
    if nodes.is_empty() {
        return Err(bad("empty tree"));
    }
    Ok(nodes)
}

pub fn save_detector(det: &Detector, path: &std::path::Path) -> std::io::Result<()> {
    std::fs::write(path, detector_to_text(det))
}

pub fn load_detector(path: &std::path::Path) -> Result<Detector, DetectError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DetectError::ModelFormat(format!("{}: {e}", path.display())))?;
    detector_from_text(&text)
}
