//! Yeo-Johnson power transform with maximum-likelihood λ and
//! standardization of the transformed feature.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IatcError, Result};
use crate::stats::{mean, std_dev};

pub const LAMBDA_BOUNDS: (f64, f64) = (-5.0, 5.0);
const GRID_POINTS: usize = 101;
const GOLDEN_TOL: f64 = 1e-6;
const MIN_SAMPLES: usize = 10;

/// Fitted transform for a single feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YeoJohnsonParams {
    pub lambda: f64,
    pub post_mean: f64,
    pub post_std: f64,
}

/// The raw Yeo-Johnson transform ψ(λ, x), before standardization.
pub fn yeo_johnson(lambda: f64, x: f64) -> f64 {
    if x >= 0.0 {
        let l = x.ln_1p();
        if lambda.abs() < 1e-12 {
            l
        } else {
            (lambda * l).exp_m1() / lambda
        }
    } else {
        let l = (-x).ln_1p();
        let k = 2.0 - lambda;
        if k.abs() < 1e-12 {
            -l
        } else {
            -(k * l).exp_m1() / k
        }
    }
}

/// Profile log-likelihood of λ under a Gaussian model for the transformed
/// samples, Jacobian included.
pub fn log_likelihood(lambda: f64, x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let t: Vec<f64> = x.iter().map(|&v| yeo_johnson(lambda, v)).collect();
    if t.iter().any(|v| !v.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let var = std_dev(&t).powi(2);
    if !(var > 0.0) || !var.is_finite() {
        return f64::NEG_INFINITY;
    }
    let jac: f64 = x.iter().map(|&v| v.signum() * v.abs().ln_1p()).sum();
    -0.5 * n * var.ln() + (lambda - 1.0) * jac
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Maximum-likelihood λ on [-5, 5]: a 101-point scan locates the best
/// bracket (and guards against multimodal likelihoods), golden-section
/// search refines within it.
pub fn fit_lambda(x: &[f64]) -> Result<f64> {
    let (lo, hi) = LAMBDA_BOUNDS;
    let step = (hi - lo) / (GRID_POINTS - 1) as f64;
    let grid: Vec<(f64, f64)> = (0..GRID_POINTS)
        .map(|k| {
            let l = lo + k as f64 * step;
            (l, log_likelihood(l, x))
        })
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty grid");
    if !grid[best].1.is_finite() {
        return Err(IatcError::PowerTransform(
            "log-likelihood is not finite anywhere on the λ grid".into(),
        ));
    }
    let a = grid[best.saturating_sub(1)].0;
    let b = grid[(best + 1).min(GRID_POINTS - 1)].0;
    let refined = golden_max(|l| log_likelihood(l, x), a, b, GOLDEN_TOL);
    if log_likelihood(refined, x) >= grid[best].1 {
        Ok(refined)
    } else {
        Ok(grid[best].0)
    }
}

/// Fits λ and the post-transform standardization for one feature.
pub fn yj_fit(x: &[f64]) -> Result<YeoJohnsonParams> {
    if x.len() < MIN_SAMPLES {
        return Err(IatcError::PowerTransform(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            x.len()
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IatcError::PowerTransform("non-finite sample".into()));
    }
    if std_dev(x) == 0.0 {
        return Err(IatcError::PowerTransform("zero-variance input".into()));
    }
    let lambda = fit_lambda(x)?;
    let t: Vec<f64> = x.iter().map(|&v| yeo_johnson(lambda, v)).collect();
    let post_std = std_dev(&t);
    if !(post_std > 0.0) || !post_std.is_finite() {
        return Err(IatcError::PowerTransform(format!(
            "transformed samples degenerate at λ = {lambda}"
        )));
    }
    Ok(YeoJohnsonParams {
        lambda,
        post_mean: mean(&t),
        post_std,
    })
}

impl YeoJohnsonParams {
    pub fn apply_one(&self, x: f64) -> f64 {
        (yeo_johnson(self.lambda, x) - self.post_mean) / self.post_std
    }
}

/// Transforms samples with already-fitted parameters.
pub fn yj_apply(params: &YeoJohnsonParams, x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| params.apply_one(v)).collect()
}

/// Column-wise transform of a stimuli × features matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTransformer {
    pub features: Vec<YeoJohnsonParams>,
}

impl PowerTransformer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let features = (0..x.ncols())
            .map(|j| {
                yj_fit(x.column(j).as_slice())
                    .map_err(|e| IatcError::PowerTransform(format!("feature {j}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PowerTransformer { features })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.features.len() {
            return Err(IatcError::dims(format!(
                "{} columns for a transformer fitted on {}",
                x.ncols(),
                self.features.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            self.features[j].apply_one(x[(i, j)])
        }))
    }
}
