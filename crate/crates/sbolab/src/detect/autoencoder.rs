//! Bottlenecked feedforward autoencoder trained to reconstruct its input.
//! tanh hidden activations, linear output, mini-batch gradient descent
//! with adaptive moment estimation. Everything is f64 and seeded, so a fit
//! is reproducible bit-for-bit.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DetectError;
use crate::util::quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AeHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for AeHyper {
    fn default() -> Self {
        AeHyper { epochs: 200, learning_rate: 1e-3, batch_size: 32, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    /// Layer widths, e.g. `[8, 6, 3, 6, 8]`; the middle entry is the
    /// bottleneck.
    pub sizes: Vec<usize>,
    /// Row-major `out x in` weight matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub hyper: AeHyper,
    pub final_loss: f64,
    /// 0.95 quantile of training reconstruction errors.
    pub recon_threshold: f64,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Hidden widths around the bottleneck for an input of dimension `d`:
/// d-6-3-6-d.
pub fn default_sizes(d: usize) -> Vec<usize> {
    vec![d, 6, 3, 6, d]
}

impl AutoencoderModel {
    fn layer_count(&self) -> usize {
        self.sizes.len() - 1
    }

    fn bottleneck_layer(&self) -> usize {
        (self.sizes.len() - 1) / 2
    }

    /// Activations per layer boundary: `acts[0]` is the input, `acts[l+1]`
    /// the output of layer l.
    fn forward(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        for l in 0..self.layer_count() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let last = l == self.layer_count() - 1;
            let mut out = vec![0.0; n_out];
            for o in 0..n_out {
                let mut z = self.biases[l][o];
                let row = &self.weights[l][o * n_in..(o + 1) * n_in];
                for (w, a) in row.iter().zip(&acts[l]) {
                    z += w * a;
                }
                out[o] = if last { z } else { z.tanh() };
            }
            acts.push(out);
        }
        acts
    }

    /// Bottleneck code of a sample.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>, DetectError> {
        if x.len() != self.sizes[0] {
            return Err(DetectError::DimensionMismatch { expected: self.sizes[0], found: x.len() });
        }
        let acts = self.forward(x);
        Ok(acts[self.bottleneck_layer()].clone())
    }

    /// Mean squared reconstruction error of a sample.
    pub fn recon_error(&self, x: &[f64]) -> Result<f64, DetectError> {
        if x.len() != self.sizes[0] {
            return Err(DetectError::DimensionMismatch { expected: self.sizes[0], found: x.len() });
        }
        let acts = self.forward(x);
        let out = acts.last().unwrap();
        Ok(out.iter().zip(x).map(|(r, v)| (r - v) * (r - v)).sum::<f64>() / x.len() as f64)
    }

    pub fn is_anomaly(&self, x: &[f64]) -> Result<bool, DetectError> {
        Ok(self.recon_error(x)? > self.recon_threshold)
    }
}

/// Mean batch loss and gradients with respect to every weight and bias.
/// Loss = mean over samples of the per-sample mean squared error.
pub fn loss_and_grads(
    model: &AutoencoderModel,
    batch: &[Vec<f64>],
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let layers = model.layer_count();
    let mut gw: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut loss = 0.0;
    let d_out = model.sizes[0] as f64;
    let scale = 1.0 / batch.len() as f64;
    for x in batch {
        let acts = model.forward(x);
        let out = acts.last().unwrap();
        loss += out.iter().zip(x).map(|(r, v)| (r - v) * (r - v)).sum::<f64>() / d_out;
        // delta at the linear output
        let mut delta: Vec<f64> =
            out.iter().zip(x).map(|(r, v)| 2.0 * (r - v) / d_out * scale).collect();
        for l in (0..layers).rev() {
            let n_in = model.sizes[l];
            let n_out = model.sizes[l + 1];
            for o in 0..n_out {
                gb[l][o] += delta[o];
                let grow = &mut gw[l][o * n_in..(o + 1) * n_in];
                for (g, a) in grow.iter_mut().zip(&acts[l]) {
                    *g += delta[o] * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (i, p) in prev.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for o in 0..n_out {
                        s += model.weights[l][o * n_in + i] * delta[o];
                    }
                    // activation of layer l-1 output is tanh
                    let a = acts[l][i];
                    *p = s * (1.0 - a * a);
                }
                delta = prev;
            }
        }
    }
    (loss * scale, gw, gb)
}

/// Trains on standardized clean data. Errors if the loss goes non-finite.
pub fn fit_autoencoder(
    x: &[Vec<f64>],
    sizes: Option<Vec<usize>>,
    hyper: AeHyper,
) -> Result<AutoencoderModel, DetectError> {
    if x.is_empty() {
        return Err(DetectError::EmptyTrainingSet);
    }
    let d = x[0].len();
    let sizes = sizes.unwrap_or_else(|| default_sizes(d));
    assert!(sizes.len() >= 3 && sizes.len() % 2 == 1, "odd number of layer widths required");
    assert_eq!(sizes[0], d, "input width must match the data");
    assert_eq!(sizes[0], *sizes.last().unwrap(), "autoencoder output must match its input");

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let layers = sizes.len() - 1;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for l in 0..layers {
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        weights.push((0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect());
        biases.push(vec![0.0; n_out]);
    }
    let mut model = AutoencoderModel {
        sizes,
        weights,
        biases,
        hyper,
        final_loss: f64::NAN,
        recon_threshold: f64::NAN,
    };

    let mut mw: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut vw = mw.clone();
    let mut mb: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut vb = mb.clone();
    let mut t = 0u32;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut last_loss = f64::NAN;
    for _epoch in 0..hyper.epochs {
        // seeded in-place shuffle
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(hyper.batch_size.max(1)) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| x[i].clone()).collect();
            let (loss, gw, gb) = loss_and_grads(&model, &batch);
            if !loss.is_finite() {
                return Err(DetectError::NonFiniteLoss);
            }
            last_loss = loss;
            t += 1;
            let bc1 = 1.0 - ADAM_B1.powi(t as i32);
            let bc2 = 1.0 - ADAM_B2.powi(t as i32);
            for l in 0..model.weights.len() {
                adam_update(
                    &mut model.weights[l],
                    &gw[l],
                    &mut mw[l],
                    &mut vw[l],
                    hyper.learning_rate,
                    bc1,
                    bc2,
                );
                adam_update(
                    &mut model.biases[l],
                    &gb[l],
                    &mut mb[l],
                    &mut vb[l],
                    hyper.learning_rate,
                    bc1,
                    bc2,
                );
            }
        }
    }
    model.final_loss = last_loss;
    let errs: Vec<f64> =
        x.iter().map(|p| model.recon_error(p).expect("dims checked")).collect();
    model.recon_threshold = quantile(&errs, 0.95);
    Ok(model)
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * grads[i];
        v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * grads[i] * grads[i];
        let mh = m[i] / bc1;
        let vh = v[i] / bc2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}
