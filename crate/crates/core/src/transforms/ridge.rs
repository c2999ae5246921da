//! Multi-target ridge regression with one shared, cross-validated penalty.
//! Every penalty on the grid reuses a single SVD of the centered design.

use nalgebra::DMatrix;

use super::{cv_select, FitDiagnostics, FittedMap, LinearParams, MapParams, MappingMethod};
use crate::error::{IatcError, Result};
use crate::stats::column_means;

/// Thin SVD of a centered design, kept together with Uᵀ·Y_centered.
pub(crate) struct RidgeSvd {
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
    singular: Vec<f64>,
    v: DMatrix<f64>,
    uty: DMatrix<f64>,
}

pub(crate) fn center(m: &DMatrix<f64>, means: &[f64]) -> DMatrix<f64> {
    let mut c = m.clone();
    for (j, mu) in means.iter().enumerate() {
        c.column_mut(j).add_scalar_mut(-mu);
    }
    c
}

impl RidgeSvd {
    pub(crate) fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<Self> {
        let x_mean = column_means(x);
        let y_mean = column_means(y);
        let xc = center(x, &x_mean);
        let yc = center(y, &y_mean);
        let svd = xc.svd(true, true);
        let top = svd.singular_values.max();
        if !(top > 0.0) {
            return None;
        }
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vᵀ");
        let uty = u.tr_mul(&yc);
        Some(RidgeSvd {
            x_mean,
            y_mean,
            singular: svd.singular_values.iter().copied().collect(),
            v: v_t.transpose(),
            uty,
        })
    }

    /// Weights and intercepts at penalty `lambda`.
    pub(crate) fn solve(&self, lambda: f64) -> (DMatrix<f64>, Vec<f64>) {
        let mut scaled = self.uty.clone();
        for (k, s) in self.singular.iter().enumerate() {
            let f = if *s > 0.0 { s / (s * s + lambda) } else { 0.0 };
            scaled.row_mut(k).scale_mut(f);
        }
        let w = &self.v * scaled;
        let intercept = (0..w.ncols())
            .map(|j| {
                self.y_mean[j]
                    - self
                        .x_mean
                        .iter()
                        .enumerate()
                        .map(|(i, m)| m * w[(i, j)])
                        .sum::<f64>()
            })
            .collect();
        (w, intercept)
    }
}

fn has_variance(x: &DMatrix<f64>) -> bool {
    (0..x.ncols()).any(|j| {
        let c = x.column(j);
        c.iter().any(|v| *v != c[0])
    })
}

/// Ridge solution at a fixed penalty, fitted on all rows given.
pub fn ridge_weights(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> Result<LinearParams> {
    if !has_variance(x) {
        return Err(IatcError::DegenerateDesign("all source columns are constant".into()));
    }
    let svd = RidgeSvd::new(x, y)
        .ok_or_else(|| IatcError::DegenerateDesign("rank-0 design".into()))?;
    let (w, b) = svd.solve(lambda);
    Ok(LinearParams::from_parts(&w, b))
}

pub fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda_grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<FittedMap> {
    if lambda_grid.is_empty() || lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(IatcError::Config("ridge λ grid must be nonempty and positive".into()));
    }
    if x.nrows() != y.nrows() {
        return Err(IatcError::dims("source and target stimulus counts differ"));
    }
    if !has_variance(x) {
        return Err(IatcError::DegenerateDesign("all source columns are constant".into()));
    }
    let cv_scores = cv_select(x, y, folds, seed, lambda_grid.len(), |xf, yf, xh, yh, fold| {
        let svd = RidgeSvd::new(xf, yf).ok_or_else(|| IatcError::DegenerateFold {
            fold,
            message: "constant design in fit part".into(),
        })?;
        Ok(lambda_grid
            .iter()
            .map(|&l| {
                let (w, b) = svd.solve(l);
                LinearParams::apply_parts(&w, &b, xh)
            })
            .map(|pred| super::mean_r2(yh, &pred))
            .collect())
    })?;
    let best = super::argmax(&cv_scores);
    let lambda = lambda_grid[best];
    let params = ridge_weights(x, y, lambda)?;
    Ok(FittedMap {
        method: MappingMethod::Ridge {
            lambda_grid: lambda_grid.to_vec(),
            folds,
            seed,
        },
        params: MapParams::Linear(params),
        diagnostics: FitDiagnostics {
            iterations: 1,
            converged: true,
            selected_regularization: Some(lambda),
            cv_scores: Some(cv_scores),
            ..Default::default()
        },
        target_neuron_ids: None,
    })
}
