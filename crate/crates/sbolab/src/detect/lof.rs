//! Local outlier factor in novelty mode: neighbors of a query are searched
//! among training points only, with exact exhaustive k-NN.
//!
//! Degenerate geometry (duplicated points) is handled with the natural
//! infinity conventions: a zero mean reachability distance gives an
//! infinite local reachability density, and an inf/inf score ratio reads
//! as 1 (the query sits in the same duplicate mass as its neighbors).

use super::{sq_dist, DetectError};
use crate::util::quantile;

#[derive(Debug, Clone, PartialEq)]
pub struct LofModel {
    pub k: usize,
    pub quantile: f64,
    pub points: Vec<Vec<f64>>,
    /// Distance to the k-th nearest other training point, per point.
    pub k_dist: Vec<f64>,
    /// Local reachability density per training point.
    pub lrd: Vec<f64>,
    /// Leave-one-out LOF score per training point.
    pub train_scores: Vec<f64>,
    /// Anomaly cutoff: the configured quantile of the training scores.
    pub threshold: f64,
}

/// Indices of the k nearest points to `x` among `points`, excluding
/// `skip` (pass `usize::MAX` to keep all), ties broken by index order.
/// Selection first, then a small sort, so queries stay O(n).
fn k_nearest(points: &[Vec<f64>], x: &[f64], k: usize, skip: usize) -> Vec<(usize, f64)> {
    let mut dists: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != skip)
        .map(|(i, p)| (i, sq_dist(p, x).sqrt()))
        .collect();
    let cmp = |a: &(usize, f64), b: &(usize, f64)| {
        a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0))
    };
    if k < dists.len() {
        dists.select_nth_unstable_by(k - 1, cmp);
        dists.truncate(k);
    }
    dists.sort_by(cmp);
    dists
}

fn lrd_from(neigh: &[(usize, f64)], k_dist: &[f64]) -> f64 {
    let mean_reach: f64 =
        neigh.iter().map(|&(o, d)| d.max(k_dist[o])).sum::<f64>() / neigh.len() as f64;
    if mean_reach == 0.0 {
        f64::INFINITY
    } else {
        1.0 / mean_reach
    }
}

fn lof_ratio(mean_neighbor_lrd: f64, own_lrd: f64) -> f64 {
    if mean_neighbor_lrd.is_infinite() && own_lrd.is_infinite() {
        1.0
    } else {
        mean_neighbor_lrd / own_lrd
    }
}

pub fn fit_lof(x: &[Vec<f64>], k: usize, q: f64) -> Result<LofModel, DetectError> {
    let n = x.len();
    if k < 1 || n <= k {
        return Err(DetectError::TooFewPoints { needed: k + 1, got: n });
    }
    let neighbors: Vec<Vec<(usize, f64)>> =
        (0..n).map(|i| k_nearest(x, &x[i], k, i)).collect();
    let k_dist: Vec<f64> = neighbors.iter().map(|nb| nb[nb.len() - 1].1).collect();
    let lrd: Vec<f64> = neighbors.iter().map(|nb| lrd_from(nb, &k_dist)).collect();
    let train_scores: Vec<f64> = (0..n)
        .map(|i| {
            let mean_lrd: f64 =
                neighbors[i].iter().map(|&(o, _)| lrd[o]).sum::<f64>() / k as f64;
            lof_ratio(mean_lrd, lrd[i])
        })
        .collect();
    let finite: Vec<f64> =
        train_scores.iter().map(|&s| if s.is_finite() { s } else { f64::MAX }).collect();
    let threshold = quantile(&finite, q);
    Ok(LofModel {
        k,
        quantile: q,
        points: x.to_vec(),
        k_dist,
        lrd,
        train_scores,
        threshold,
    })
}

/// LOF of a query point with respect to the training set.
pub fn score(model: &LofModel, x: &[f64]) -> Result<f64, DetectError> {
    let d = model.points[0].len();
    if x.len() != d {
        return Err(DetectError::DimensionMismatch { expected: d, found: x.len() });
    }
    let neigh = k_nearest(&model.points, x, model.k, usize::MAX);
    let own_lrd = lrd_from(&neigh, &model.k_dist);
    let mean_lrd: f64 =
        neigh.iter().map(|&(o, _)| model.lrd[o]).sum::<f64>() / neigh.len() as f64;
    Ok(lof_ratio(mean_lrd, own_lrd))
}

pub fn is_anomaly(model: &LofModel, x: &[f64]) -> Result<bool, DetectError> {
    Ok(score(model, x)? > model.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian_cluster(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        // Box-Muller from a seeded stream.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        let u1: f64 = rng.random_range(1e-12..1.0);
                        let u2: f64 = rng.random_range(0.0..1.0);
                        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    })
                    .collect()
            })
            .collect()
    }

    // Direct transcription of the standard definitions, O(n^2), written
    // separately from the implementation above as its oracle.
    fn reference_lof(train: &[Vec<f64>], k: usize, x: &[f64]) -> f64 {
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
        };
        let knn = |q: &[f64], skip: Option<usize>| -> Vec<usize> {
            let mut ds: Vec<(usize, f64)> = train
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != skip)
                .map(|(i, p)| (i, dist(p, q)))
                .collect();
            ds.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            ds.truncate(k);
            ds.into_iter().map(|(i, _)| i).collect()
        };
        let kdist = |i: usize| -> f64 {
            let nb = knn(&train[i], Some(i));
            dist(&train[i], &train[nb[k - 1]])
        };
        let lrd_of = |q: &[f64], nb: &[usize]| -> f64 {
            let mr = nb.iter().map(|&o| dist(q, &train[o]).max(kdist(o))).sum::<f64>()
                / nb.len() as f64;
            1.0 / mr
        };
        let nb = knn(x, None);
        let own = lrd_of(x, &nb);
        let mean_nb = nb
            .iter()
            .map(|&o| {
                let onb = knn(&train[o], Some(o));
                lrd_of(&train[o], &onb)
            })
            .sum::<f64>()
            / k as f64;
        mean_nb / own
    }

    #[test]
    fn training_point_in_uniform_cluster_scores_near_one() {
        let train = gaussian_cluster(200, 4, 3);
        let model = fit_lof(&train, 20, 0.95).unwrap();
        let s = score(&model, &train[17].clone()).unwrap();
        assert!((0.8..=1.2).contains(&s), "score {s}");
    }

    #[test]
    fn far_outlier_flagged() {
        let train = gaussian_cluster(100, 3, 4);
        let model = fit_lof(&train, 20, 0.95).unwrap();
        let s = score(&model, &[30.0, 30.0, 30.0]).unwrap();
        assert!(s > 2.0, "score {s}");
        assert!(is_anomaly(&model, &[30.0, 30.0, 30.0]).unwrap());
    }

    #[test]
    fn matches_reference_implementation_to_1e9() {
        let train = gaussian_cluster(200, 5, 9);
        let model = fit_lof(&train, 10, 0.95).unwrap();
        let probes = gaussian_cluster(50, 5, 10);
        for p in &probes {
            let got = score(&model, p).unwrap();
            let want = reference_lof(&train, 10, p);
            assert!((got - want).abs() <= 1e-9, "got {got}, want {want}");
        }
    }

    #[test]
    fn duplicate_mass_conventions() {
        // 30 identical points plus a far probe: train scores are 1 by the
        // inf/inf convention, the probe is infinite, a duplicate probe is 1.
        let train: Vec<Vec<f64>> = (0..30).map(|_| vec![2.0, 2.0]).collect();
        let model = fit_lof(&train, 5, 0.95).unwrap();
        assert!(model.train_scores.iter().all(|&s| s == 1.0));
        assert_eq!(score(&model, &[2.0, 2.0]).unwrap(), 1.0);
        assert!(score(&model, &[9.0, 9.0]).unwrap().is_infinite());
    }

    #[test]
    fn too_few_points_rejected() {
        let train = gaussian_cluster(10, 2, 1);
        assert!(matches!(
            fit_lof(&train, 10, 0.95),
            Err(DetectError::TooFewPoints { .. })
        ));
    }
}
