//! One-class SVM with an RBF kernel, solved by two-variable working-set
//! optimization on the dual:
//!
//! minimize ½ ΣΣ αᵢαⱼ K(xᵢ,xⱼ)  s.t.  0 ≤ αᵢ ≤ 1/(νn),  Σαᵢ = 1.
//!
//! The maximal violating pair is optimized each iteration until the KKT
//! gap drops below the tolerance. Only vectors with αᵢ > 1e-8 are kept.

use super::{sq_dist, DetectError};

pub const DEFAULT_NU: f64 = 0.05;
pub const KKT_TOL: f64 = 1e-4;
const ALPHA_KEEP: f64 = 1e-8;
const MAX_ITER: usize = 200_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OcSvmModel {
    pub gamma: f64,
    pub nu: f64,
    pub rho: f64,
    pub support_vectors: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    (-gamma * sq_dist(a, b)).exp()
}

/// Fits on standardized clean data. `gamma` defaults to 1/d when `None`.
pub fn fit_ocsvm(x: &[Vec<f64>], nu: f64, gamma: Option<f64>) -> Result<OcSvmModel, DetectError> {
    if x.is_empty() {
        return Err(DetectError::EmptyTrainingSet);
    }
    let n = x.len();
    let d = x[0].len();
    let gamma = gamma.unwrap_or(1.0 / d as f64);
    if !(0.0 < nu && nu <= 1.0) || nu * (n as f64) < 1.0 {
        return Err(DetectError::NuInfeasible { nu, n });
    }
    let c = 1.0 / (nu * n as f64);

    // Full kernel matrix; n is desk-scale by design.
    let mut kernel = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let v = rbf(gamma, &x[i], &x[j]);
            kernel[i * n + j] = v;
            kernel[j * n + i] = v;
        }
    }

    // LIBSVM-style feasible start: the first floor(nu*n) points take the
    // box bound, the next takes the remainder.
    let mut alpha = vec![0.0f64; n];
    let mut remaining = 1.0f64;
    for a in alpha.iter_mut() {
        let take = remaining.min(c);
        *a = take;
        remaining -= take;
        if remaining <= 0.0 {
            break;
        }
    }

    // Gradient of the dual objective: G = K alpha.
    let mut grad = vec![0.0f64; n];
    for i in 0..n {
        if alpha[i] > 0.0 {
            let ai = alpha[i];
            let row = &kernel[i * n..(i + 1) * n];
            for (g, kv) in grad.iter_mut().zip(row) {
                *g += ai * kv;
            }
        }
    }

    for _ in 0..MAX_ITER {
        // Maximal violating pair: i may grow (alpha < C), j may shrink
        // (alpha > 0).
        let mut i_up = usize::MAX;
        let mut g_min = f64::INFINITY;
        let mut j_dn = usize::MAX;
        let mut g_max = f64::NEG_INFINITY;
        for t in 0..n {
            if alpha[t] < c && grad[t] < g_min {
                g_min = grad[t];
                i_up = t;
            }
            if alpha[t] > 0.0 && grad[t] > g_max {
                g_max = grad[t];
                j_dn = t;
            }
        }
        if i_up == usize::MAX || j_dn == usize::MAX || g_max - g_min < KKT_TOL {
            break;
        }
        let (i, j) = (i_up, j_dn);
        let eta = (kernel[i * n + i] + kernel[j * n + j] - 2.0 * kernel[i * n + j]).max(1e-12);
        let step = ((grad[j] - grad[i]) / eta)
            .min(c - alpha[i])
            .min(alpha[j]);
        if step <= 0.0 {
            break;
        }
        alpha[i] += step;
        alpha[j] -= step;
        let (ki, kj) = (&kernel[i * n..(i + 1) * n], &kernel[j * n..(j + 1) * n]);
        for ((g, a), b) in grad.iter_mut().zip(ki).zip(kj) {
            *g += step * (a - b);
        }
    }

    // rho from the KKT conditions. Any value between the largest gradient
    // at the upper bound and the smallest gradient off it is admissible at
    // the tolerance; taking the smallest off-bound gradient keeps every
    // non-bound point on the inlier side, so only bound points (at most a
    // nu fraction) can score negative.
    let lo = (0..n).filter(|&t| alpha[t] < c).map(|t| grad[t]).fold(f64::INFINITY, f64::min);
    let rho = if lo.is_finite() {
        lo
    } else {
        (0..n).filter(|&t| alpha[t] > 0.0).map(|t| grad[t]).fold(f64::NEG_INFINITY, f64::max)
    };

    let mut support_vectors = Vec::new();
    let mut alphas = Vec::new();
    for t in 0..n {
        if alpha[t] > ALPHA_KEEP {
            support_vectors.push(x[t].clone());
            alphas.push(alpha[t]);
        }
    }
    Ok(OcSvmModel { gamma, nu, rho, support_vectors, alphas })
}

/// Decision value; non-negative means inlier.
pub fn score(model: &OcSvmModel, x: &[f64]) -> Result<f64, DetectError> {
    let d = model.support_vectors[0].len();
    if x.len() != d {
        return Err(DetectError::DimensionMismatch { expected: d, found: x.len() });
    }
    let s: f64 = model
        .support_vectors
        .iter()
        .zip(&model.alphas)
        .map(|(sv, a)| a * rbf(model.gamma, sv, x))
        .sum();
    Ok(s - model.rho)
}

pub fn is_anomaly(model: &OcSvmModel, x: &[f64]) -> Result<bool, DetectError> {
    Ok(score(model, x)? < 0.0)
}

/// Dual objective ½ αᵀKα of the kept support vectors.
pub fn dual_objective(model: &OcSvmModel) -> f64 {
    let m = model.support_vectors.len();
    let mut obj = 0.0;
    for i in 0..m {
        for j in 0..m {
            obj += model.alphas[i]
                * model.alphas[j]
                * rbf(model.gamma, &model.support_vectors[i], &model.support_vectors[j]);
        }
    }
    0.5 * obj
}
