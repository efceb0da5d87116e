//! Isolation forest: seeded random trees over subsamples, anomaly score
//! s(x) = 2^(−E[h(x)]/c(ψ)).

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DetectError;
use crate::util::{mix64, quantile};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_PSI: usize = 256;
const EULER_GAMMA: f64 = 0.5772156649;

#[derive(Debug, Clone, PartialEq)]
pub enum IsoNode {
    Split { feature: usize, value: f64, left: u32, right: u32 },
    External { size: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IForestModel {
    pub trees: Vec<Vec<IsoNode>>,
    pub psi: usize,
    pub n_trees: usize,
    pub contamination: f64,
    pub seed: u64,
    /// Average-path normalizer c(ψ).
    pub c_psi: f64,
    pub threshold: f64,
}

/// Average unsuccessful-search path length in a binary tree of m nodes:
/// c(m) = 2·H(m−1) − 2(m−1)/m with H(k) = ln k + γ; 0 for m < 2.
pub fn c_factor(m: usize) -> f64 {
    if m < 2 {
        return 0.0;
    }
    let m = m as f64;
    2.0 * ((m - 1.0).ln() + EULER_GAMMA) - 2.0 * (m - 1.0) / m
}

fn build_tree(
    data: &[Vec<f64>],
    indices: &mut [usize],
    depth: usize,
    limit: usize,
    rng: &mut ChaCha8Rng,
    nodes: &mut Vec<IsoNode>,
) -> u32 {
    let id = nodes.len() as u32;
    if indices.len() <= 1 || depth >= limit {
        nodes.push(IsoNode::External { size: indices.len() });
        return id;
    }
    let d = data[0].len();
    // Features with spread in this node; a node with none becomes external.
    let mut candidates = Vec::with_capacity(d);
    for f in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in indices.iter() {
            lo = lo.min(data[i][f]);
            hi = hi.max(data[i][f]);
        }
        if hi > lo {
            candidates.push((f, lo, hi));
        }
    }
    if candidates.is_empty() {
        nodes.push(IsoNode::External { size: indices.len() });
        return id;
    }
    let (feature, lo, hi) = candidates[rng.random_range(0..candidates.len())];
    let value = rng.random_range(lo..hi);
    nodes.push(IsoNode::External { size: 0 }); // placeholder, patched below
    let split_at = partition(data, indices, feature, value);
    let (left_part, right_part) = indices.split_at_mut(split_at);
    let left = build_tree(data, left_part, depth + 1, limit, rng, nodes);
    let right = build_tree(data, right_part, depth + 1, limit, rng, nodes);
    nodes[id as usize] = IsoNode::Split { feature, value, left, right };
    id
}

fn partition(data: &[Vec<f64>], indices: &mut [usize], feature: usize, value: f64) -> usize {
    let mut store = 0;
    for i in 0..indices.len() {
        if data[indices[i]][feature] < value {
            indices.swap(store, i);
            store += 1;
        }
    }
    store
}

pub fn fit_iforest(
    x: &[Vec<f64>],
    n_trees: usize,
    psi: Option<usize>,
    seed: u64,
    contamination: f64,
) -> Result<IForestModel, DetectError> {
    let n = x.len();
    if n < 2 {
        return Err(DetectError::TooFewPoints { needed: 2, got: n });
    }
    let psi = psi.unwrap_or(DEFAULT_PSI).min(n);
    let limit = (psi as f64).log2().ceil() as usize;
    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ (t as u64).wrapping_mul(0x9e37)));
        // ψ-subsample without replacement, partial Fisher-Yates.
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..psi {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        let mut sample = pool[..psi].to_vec();
        let mut nodes = Vec::new();
        build_tree(x, &mut sample, 0, limit, &mut rng, &mut nodes);
        trees.push(nodes);
    }
    let mut model = IForestModel {
        trees,
        psi,
        n_trees,
        contamination,
        seed,
        c_psi: c_factor(psi),
        threshold: 0.0,
    };
    let train_scores: Vec<f64> = x.iter().map(|p| score(&model, p).unwrap()).collect();
    model.threshold = quantile(&train_scores, 1.0 - contamination);
    Ok(model)
}

fn path_length(nodes: &[IsoNode], x: &[f64]) -> f64 {
    let mut id = 0u32;
    let mut depth = 0.0;
    loop {
        match &nodes[id as usize] {
            IsoNode::External { size } => return depth + c_factor(*size),
            IsoNode::Split { feature, value, left, right } => {
                id = if x[*feature] < *value { *left } else { *right };
                depth += 1.0;
            }
        }
    }
}

/// Anomaly score in (0, 1); larger is more anomalous.
pub fn score(model: &IForestModel, x: &[f64]) -> Result<f64, DetectError> {
    let mean_path: f64 =
        model.trees.iter().map(|t| path_length(t, x)).sum::<f64>() / model.trees.len() as f64;
    Ok((2.0f64).powf(-mean_path / model.c_psi))
}

pub fn is_anomaly(model: &IForestModel, x: &[f64]) -> Result<bool, DetectError> {
    Ok(score(model, x)? > model.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_factor_spot_values() {
        assert!((c_factor(2) - 0.1544313298).abs() < 1e-10);
        assert_eq!(c_factor(1), 0.0);
        assert_eq!(c_factor(0), 0.0);
        // c is increasing in m
        assert!(c_factor(256) > c_factor(64));
    }

    fn fixture(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x: Vec<Vec<f64>> = Vec::new();
        // a point duplicated 50 times inside a scattered sample
        for _ in 0..50 {
            x.push(vec![1.0, 1.0]);
        }
        for _ in 0..50 {
            x.push(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
        }
        (x, vec![1.0, 1.0], vec![25.0, -30.0])
    }

    #[test]
    fn duplicated_point_scores_below_extreme_outlier() {
        let (x, dup, outlier) = fixture(3);
        let model = fit_iforest(&x, 100, None, 42, 0.05).unwrap();
        let s_dup = score(&model, &dup).unwrap();
        let s_out = score(&model, &outlier).unwrap();
        assert!(s_dup < s_out, "dup {s_dup} vs outlier {s_out}");
        assert!(s_out > 0.5);
    }

    #[test]
    fn outlier_decision_stable_across_seeds() {
        let (x, _, outlier) = fixture(4);
        for seed in 0..10 {
            let model = fit_iforest(&x, 100, None, seed, 0.05).unwrap();
            assert!(is_anomaly(&model, &outlier).unwrap(), "seed {seed}");
        }
    }

    #[test]
    fn scores_in_unit_interval() {
        let (x, ..) = fixture(5);
        let model = fit_iforest(&x, 50, Some(64), 7, 0.05).unwrap();
        for p in &x {
            let s = score(&model, p).unwrap();
            assert!(s > 0.0 && s < 1.0, "{s}");
        }
    }

    #[test]
    fn deterministic_in_seed() {
        let (x, ..) = fixture(6);
        let a = fit_iforest(&x, 20, None, 9, 0.05).unwrap();
        let b = fit_iforest(&x, 20, None, 9, 0.05).unwrap();
        assert_eq!(a, b);
    }
}
