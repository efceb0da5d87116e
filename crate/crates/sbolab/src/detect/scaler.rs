//! Per-feature standardization fitted on clean training data.

use super::DetectError;

/// Per-feature mean and standard deviation. Zero-variance features get a
/// standard deviation of 1 and are flagged constant, so they pass through
/// after centering.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalerParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

pub fn fit_scaler(train: &[Vec<f64>]) -> Result<ScalerParams, DetectError> {
    if train.is_empty() {
        return Err(DetectError::EmptyTrainingSet);
    }
    let d = train[0].len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; d];
    for row in train {
        debug_assert_eq!(row.len(), d);
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; d];
    for row in train {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    let mut std = Vec::with_capacity(d);
    let mut constant = Vec::with_capacity(d);
    for s in var {
        let sd = (s / n).sqrt();
        if sd > 0.0 {
            std.push(sd);
            constant.push(false);
        } else {
            std.push(1.0);
            constant.push(true);
        }
    }
    Ok(ScalerParams { mean, std, constant })
}

pub fn apply_scaler(params: &ScalerParams, row: &[f64]) -> Vec<f64> {
    debug_assert_eq!(row.len(), params.mean.len());
    row.iter()
        .zip(&params.mean)
        .zip(&params.std)
        .map(|((v, m), s)| (v - m) / s)
        .collect()
}

pub fn apply_scaler_matrix(params: &ScalerParams, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|r| apply_scaler(params, r)).collect()
}
