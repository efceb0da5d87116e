//! Elliptic envelope via a FastMCD-style minimum covariance determinant
//! estimate: seeded random h-subsets refined by concentration steps, the
//! minimum-determinant solution kept. The anomaly score is the squared
//! Mahalanobis distance to the robust location.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DetectError;
use crate::util::{mix64, quantile};

const RESTARTS: usize = 50;
const MAX_C_STEPS: usize = 100;
const DET_TOL: f64 = 1e-9;
const RIDGE: f64 = 1e-6;

/// Chi-square quantiles for df 1..=8, used by the reweighting step.
const CHI2_975: [f64; 8] =
    [5.0239, 7.3778, 9.3484, 11.1433, 12.8325, 14.4494, 16.0128, 17.5345];
const CHI2_MEDIAN: [f64; 8] = [0.4549, 1.3863, 2.3660, 3.3567, 4.3515, 5.3481, 6.3458, 7.3441];

#[derive(Debug, Clone, PartialEq)]
pub struct EllipticModel {
    pub location: Vec<f64>,
    /// Inverse robust covariance, symmetric positive-definite.
    pub precision: Vec<Vec<f64>>,
    pub threshold: f64,
    pub h: usize,
    pub contamination: f64,
    /// True when a ridge was added to make the covariance invertible.
    pub ridge_applied: bool,
}

fn mean_cov(data: &[Vec<f64>], subset: &[usize]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = data[0].len();
    let m = subset.len() as f64;
    let mut mean = vec![0.0; d];
    for &i in subset {
        for (a, b) in mean.iter_mut().zip(&data[i]) {
            *a += b;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let mut cov = vec![vec![0.0; d]; d];
    for &i in subset {
        for r in 0..d {
            let cr = data[i][r] - mean[r];
            for c in r..d {
                cov[r][c] += cr * (data[i][c] - mean[c]);
            }
        }
    }
    for r in 0..d {
        for c in r..d {
            cov[r][c] /= m;
            cov[c][r] = cov[r][c];
        }
    }
    (mean, cov)
}

/// Cholesky factor L with A = L Lᵀ; `None` when A is not positive-definite.
fn cholesky(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let d = a.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

fn log_det_from_chol(l: &[Vec<f64>]) -> f64 {
    2.0 * l.iter().enumerate().map(|(i, row)| row[i].ln()).sum::<f64>()
}

/// Solves L Lᵀ x = b.
fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let d = l.len();
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    x
}

fn invert_spd(cov: &[Vec<f64>]) -> Option<(Vec<Vec<f64>>, f64)> {
    let l = cholesky(cov)?;
    let d = cov.len();
    let mut inv = vec![vec![0.0; d]; d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = chol_solve(&l, &e);
        for i in 0..d {
            inv[i][j] = col[i];
        }
    }
    Some((inv, log_det_from_chol(&l)))
}

fn mahalanobis_sq(x: &[f64], location: &[f64], precision: &[Vec<f64>]) -> f64 {
    let d = x.len();
    let diff: Vec<f64> = x.iter().zip(location).map(|(a, b)| a - b).collect();
    let mut acc = 0.0;
    for r in 0..d {
        let mut row = 0.0;
        for c in 0..d {
            row += precision[r][c] * diff[c];
        }
        acc += diff[r] * row;
    }
    acc
}

/// Adds the ridge until the covariance becomes invertible.
fn robust_invert(cov: &[Vec<f64>]) -> ((Vec<Vec<f64>>, f64), bool) {
    if let Some(ok) = invert_spd(cov) {
        return (ok, false);
    }
    let mut ridged = cov.to_vec();
    let mut eps = RIDGE;
    loop {
        for (i, row) in ridged.iter_mut().enumerate() {
            row[i] = cov[i][i] + eps;
        }
        if let Some(ok) = invert_spd(&ridged) {
            return (ok, true);
        }
        eps *= 10.0;
    }
}

pub fn fit_elliptic(
    x: &[Vec<f64>],
    h: Option<usize>,
    contamination: f64,
    seed: u64,
) -> Result<EllipticModel, DetectError> {
    let n = x.len();
    let d = x.first().map(|r| r.len()).unwrap_or(0);
    if n <= d {
        return Err(DetectError::TooFewPoints { needed: d + 1, got: n });
    }
    let h = h.unwrap_or((n + d + 1) / 2).clamp(d + 1, n);

    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..RESTARTS {
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix64(seed ^ (restart as u64).wrapping_mul(0x7f4a)));
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..h {
            let j = rng.random_range(i..n);
            pool.swap(i, j);
        }
        let mut subset: Vec<usize> = pool[..h].to_vec();
        let mut prev_logdet = f64::INFINITY;
        for _ in 0..MAX_C_STEPS {
            let (mean, cov) = mean_cov(x, &subset);
            let ((precision, logdet), _) = robust_invert(&cov);
            // Concentrate on the h smallest Mahalanobis distances.
            let mut dists: Vec<(usize, f64)> = (0..n)
                .map(|i| (i, mahalanobis_sq(&x[i], &mean, &precision)))
                .collect();
            dists.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
            subset = dists[..h].iter().map(|&(i, _)| i).collect();
            subset.sort_unstable();
            if (prev_logdet.exp() - logdet.exp()).abs() < DET_TOL {
                prev_logdet = logdet;
                break;
            }
            prev_logdet = logdet;
        }
        if best.as_ref().map(|(ld, _)| prev_logdet < *ld).unwrap_or(true) {
            best = Some((prev_logdet, subset));
        }
    }

    let (_, subset) = best.expect("at least one restart");
    let (raw_location, raw_cov) = mean_cov(x, &subset);
    let ((raw_precision, _), mut ridge_applied) = robust_invert(&raw_cov);
    debug_assert!(d <= 8, "chi-square tables cover up to 8 features");

    // Standard reweighting: rescale the raw estimate for consistency
    // (median distance against the chi-square median), then refit on the
    // points inside the 0.975 chi-square cutoff. This recovers most of the
    // efficiency the raw half-sample estimate gives up.
    let mut raw_d: Vec<f64> =
        x.iter().map(|p| mahalanobis_sq(p, &raw_location, &raw_precision)).collect();
    let consistency = {
        let mut sorted = raw_d.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = sorted[(sorted.len() - 1) / 2];
        (med / CHI2_MEDIAN[d - 1]).max(f64::MIN_POSITIVE)
    };
    for v in &mut raw_d {
        *v /= consistency;
    }
    let kept: Vec<usize> =
        (0..n).filter(|&i| raw_d[i] <= CHI2_975[d - 1]).collect();
    let kept = if kept.len() > d { kept } else { subset };
    let (location, cov) = mean_cov(x, &kept);
    let ((precision, _), ridge2) = robust_invert(&cov);
    ridge_applied |= ridge2;

    let dists: Vec<f64> = x.iter().map(|p| mahalanobis_sq(p, &location, &precision)).collect();
    let threshold = quantile(&dists, 1.0 - contamination);
    Ok(EllipticModel { location, precision, threshold, h, contamination, ridge_applied })
}

/// Squared Mahalanobis distance to the robust location.
pub fn score(model: &EllipticModel, x: &[f64]) -> Result<f64, DetectError> {
    let d = model.location.len();
    if x.len() != d {
        return Err(DetectError::DimensionMismatch { expected: d, found: x.len() });
    }
    Ok(mahalanobis_sq(x, &model.location, &model.precision))
}

pub fn is_anomaly(model: &EllipticModel, x: &[f64]) -> Result<bool, DetectError> {
    Ok(score(model, x)? > model.threshold)
}
