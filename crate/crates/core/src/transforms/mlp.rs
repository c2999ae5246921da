//! Fully connected regression network: softplus hidden layers, linear
//! output, mean squared error, mini-batch Adam. Backpropagation is written
//! out by hand.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::softplus::{sigmoid, softplus};
use super::{from_nested, to_nested, FitDiagnostics, FittedMap, MapParams, MappingMethod};
use crate::error::{IatcError, Result};
use crate::rng::rng_from_seed;
use crate::stats::{column_means, column_stds};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpOptions {
    pub hidden_layout: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// in × out
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Network plus the input/output standardization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

struct Layer {
    w: DMatrix<f64>,
    b: Vec<f64>,
}

fn to_layers(m: &Mlp) -> Vec<Layer> {
    m.layers
        .iter()
        .map(|l| Layer {
            w: from_nested(&l.weights, l.bias.len()),
            b: l.bias.clone(),
        })
        .collect()
}

fn add_bias(mut m: DMatrix<f64>, b: &[f64]) -> DMatrix<f64> {
    for (j, bj) in b.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(*bj);
    }
    m
}

/// Pre-activations of every layer for input `x`; the last entry is the
/// network output.
fn forward(layers: &[Layer], x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut h = x.clone();
    for (k, l) in layers.iter().enumerate() {
        let a = add_bias(&h * &l.w, &l.b);
        inputs.push(h);
        h = if k + 1 < layers.len() { a.map(softplus) } else { a.clone() };
        pre.push(a);
    }
    (inputs, pre)
}

/// MSE loss (mean over rows and outputs) and its gradient, per layer as
/// (dW, db).
fn backward(layers: &[Layer], x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<(DMatrix<f64>, Vec<f64>)>) {
    let (inputs, pre) = forward(layers, x);
    let out = pre.last().expect("at least one layer");
    let scale = 1.0 / (y.nrows() * y.ncols()) as f64;
    let diff = out - y;
    let loss = diff.norm_squared() * scale;
    let mut delta = diff * (2.0 * scale);
    let mut grads = Vec::with_capacity(layers.len());
    for k in (0..layers.len()).rev() {
        let dw = inputs[k].tr_mul(&delta);
        let db: Vec<f64> = (0..delta.ncols()).map(|j| delta.column(j).sum()).collect();
        if k > 0 {
            let back = &delta * layers[k].w.transpose();
            delta = back.component_mul(&pre[k - 1].map(sigmoid));
        }
        grads.push((dw, db));
    }
    grads.reverse();
    (loss, grads)
}

impl Mlp {
    /// Randomly initialized network (Glorot uniform weights, zero biases)
    /// with identity standardization.
    pub fn new_random(input: usize, hidden: &[usize], output: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = (6.0 / (d[0] + d[1]) as f64).sqrt();
                let u = Uniform::new(-bound, bound).expect("valid bounds");
                DenseLayer {
                    weights: (0..d[0]).map(|_| (0..d[1]).map(|_| u.sample(&mut rng)).collect()).collect(),
                    bias: vec![0.0; d[1]],
                }
            })
            .collect();
        Mlp {
            layers,
            input_mean: vec![0.0; input],
            input_std: vec![1.0; input],
            output_mean: vec![0.0; output],
            output_std: vec![1.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_mean.len()
    }

    /// All weights and biases, layer by layer (weights row-major, then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().flatten().chain(&l.bias).copied().collect::<Vec<_>>())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        let mut k = 0;
        for l in &mut self.layers {
            for row in &mut l.weights {
                for w in row.iter_mut() {
                    *w = params[k];
                    k += 1;
                }
            }
            for b in &mut l.bias {
                *b = params[k];
                k += 1;
            }
        }
        assert_eq!(k, params.len(), "parameter vector length");
    }

    /// Loss and flattened gradient (same order as `parameters`) on
    /// already-standardized data.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
        let layers = to_layers(self);
        let (loss, grads) = backward(&layers, x, y);
        let mut flat = Vec::new();
        for (dw, db) in grads {
            for i in 0..dw.nrows() {
                flat.extend(dw.row(i).iter());
            }
            flat.extend(db);
        }
        (loss, flat)
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        let layers = to_layers(self);
        let (_, pre) = forward(&layers, x);
        (pre.last().expect("layers") - y).norm_squared() / (y.nrows() * y.ncols()) as f64
    }

    fn standardize_input(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - self.input_mean[j]) / self.input_std[j])
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(IatcError::dims(format!(
                "source has {} neurons, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        let layers = to_layers(self);
        let (_, pre) = forward(&layers, &self.standardize_input(x));
        let out = pre.last().expect("layers");
        Ok(DMatrix::from_fn(out.nrows(), out.ncols(), |i, j| {
            out[(i, j)] * self.output_std[j] + self.output_mean[j]
        }))
    }
}

fn safe_std(s: Vec<f64>) -> Vec<f64> {
    s.into_iter().map(|v| if v > 0.0 { v } else { 1.0 }).collect()
}

pub fn fit_mlp(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &MlpOptions) -> Result<FittedMap> {
    if opts.hidden_layout.is_empty() || opts.hidden_layout.contains(&0) {
        return Err(IatcError::Config("MLP needs a nonempty layout of positive widths".into()));
    }
    if opts.batch == 0 || x.nrows() < opts.batch {
        return Err(IatcError::TooFewStimuli(format!(
            "{} training stimuli for batch size {}",
            x.nrows(),
            opts.batch
        )));
    }
    let mut net = Mlp::new_random(x.ncols(), &opts.hidden_layout, y.ncols(), opts.seed);
    net.input_mean = column_means(x);
    net.input_std = safe_std(column_stds(x));
    net.output_mean = column_means(y);
    net.output_std = safe_std(column_stds(y));
    let xs = net.standardize_input(x);
    let ys = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| (y[(i, j)] - net.output_mean[j]) / net.output_std[j]);

    let mut layers = to_layers(&net);
    let mut m: Vec<(DMatrix<f64>, Vec<f64>)> = layers
        .iter()
        .map(|l| (DMatrix::zeros(l.w.nrows(), l.w.ncols()), vec![0.0; l.b.len()]))
        .collect();
    let mut v = m.clone();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;
    let mut rng = rng_from_seed(opts.seed ^ 0x5eed_0f_b47c);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut last_loss = f64::NAN;
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(opts.batch) {
            let xb = xs.select_rows(chunk);
            let yb = ys.select_rows(chunk);
            let (loss, grads) = backward(&layers, &xb, &yb);
            if !loss.is_finite() {
                return Err(IatcError::MlpDivergence { epoch });
            }
            epoch_loss += loss;
            batches += 1;
            step += 1;
            let c1 = 1.0 - f64::powi(beta1, step);
            let c2 = 1.0 - f64::powi(beta2, step);
            for (k, (dw, db)) in grads.into_iter().enumerate() {
                let (mw, mb) = &mut m[k];
                let (vw, vb) = &mut v[k];
                for ((w, g), (mm, vv)) in layers[k]
                    .w
                    .iter_mut()
                    .zip(dw.iter())
                    .zip(mw.iter_mut().zip(vw.iter_mut()))
                {
                    *mm = beta1 * *mm + (1.0 - beta1) * g;
                    *vv = beta2 * *vv + (1.0 - beta2) * g * g;
                    *w -= opts.lr * (*mm / c1) / ((*vv / c2).sqrt() + eps);
                }
                for (((b, g), mm), vv) in layers[k].b.iter_mut().zip(&db).zip(mb.iter_mut()).zip(vb.iter_mut()) {
                    *mm = beta1 * *mm + (1.0 - beta1) * g;
                    *vv = beta2 * *vv + (1.0 - beta2) * g * g;
                    *b -= opts.lr * (*mm / c1) / ((*vv / c2).sqrt() + eps);
                }
            }
        }
        last_loss = epoch_loss / batches as f64;
        if !last_loss.is_finite() {
            return Err(IatcError::MlpDivergence { epoch });
        }
    }
    net.layers = layers
        .iter()
        .map(|l| DenseLayer {
            weights: to_nested(&l.w),
            bias: l.b.clone(),
        })
        .collect();
    Ok(FittedMap {
        method: MappingMethod::Mlp {
            hidden_layout: opts.hidden_layout.clone(),
            epochs: opts.epochs,
            batch: opts.batch,
            lr: opts.lr,
            seed: opts.seed,
        },
        params: MapParams::Mlp(net),
        diagnostics: FitDiagnostics {
            iterations: opts.epochs,
            converged: true,
            selected_regularization: None,
            final_loss: last_loss.is_finite().then_some(last_loss),
            ..Default::default()
        },
        target_neuron_ids: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_and_round_trip() {
        let mut net = Mlp::new_random(3, &[4, 2], 5, 1);
        let theta = net.parameters();
        assert_eq!(theta.len(), 3 * 4 + 4 + 4 * 2 + 2 + 2 * 5 + 5);
        let shifted: Vec<f64> = theta.iter().map(|v| v + 1.0).collect();
        net.set_parameters(&shifted);
        assert_eq!(net.parameters(), shifted);
    }

    #[test]
    fn biases_start_at_zero_and_weights_are_bounded() {
        let net = Mlp::new_random(6, &[10], 4, 2);
        let bound = (6.0f64 / 16.0).sqrt();
        for l in &net.layers {
            assert!(l.bias.iter().all(|b| *b == 0.0));
        }
        assert!(net.layers[0].weights.iter().flatten().all(|w| w.abs() <= bound));
    }

    #[test]
    fn invalid_options_are_rejected() {
        let x = DMatrix::from_element(10, 2, 1.0);
        let y = DMatrix::from_element(10, 1, 1.0);
        let opts = MlpOptions { hidden_layout: vec![], epochs: 1, batch: 4, lr: 1e-3, seed: 0 };
        assert!(matches!(fit_mlp(&x, &y, &opts), Err(IatcError::Config(_))));
        let opts = MlpOptions { hidden_layout: vec![3], batch: 11, ..opts };
        assert!(matches!(fit_mlp(&x, &y, &opts), Err(IatcError::TooFewStimuli(_))));
    }
}
