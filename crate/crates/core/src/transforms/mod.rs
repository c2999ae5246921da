//! Candidate transform classes behind one fit/predict interface.
//!
//! Every method is fitted on the training stimuli of a (source, target)
//! pair and predicts the target's responses for new source rows, with the
//! target's neuron count and order.

mod lasso;
mod mlp;
mod ridge;
mod rsa;
pub mod soft_matching;
pub mod softplus;
mod zippering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{kfold, ResponseMatrix};
use crate::error::{IatcError, Result};
use crate::glm::GlmFit;
use crate::power::PowerTransformer;
use crate::stats::{mean, r2_columns};

pub use lasso::{fit_lasso, fit_lasso_fixed, lasso_path_single, LassoOptions};
pub use mlp::{fit_mlp, Mlp, MlpOptions};
pub use ridge::{fit_ridge, ridge_weights};
pub use rsa::{rdm, rsa_score};
pub use soft_matching::{
    fit_soft_matching, predict_soft_matching, round_to_marginals, SoftMatchingOptions,
    TransportPlan,
};
pub use softplus::{sigmoid, softplus, stable_softplus_inverse};
pub use zippering::{fit_approx_zippering, fit_exact_zippering, fit_linear_nonlinear};

pub const DEFAULT_SOFTPLUS_SCALE: f64 = 100.0;

/// 9 points log-spaced over 1e-4..1e4.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..9).map(|k| 10f64.powi(k - 4)).collect()
}

/// 9 points log-spaced over 1e-5..1e-1 (sum-of-squares scaled by 1/2n).
pub fn default_alpha_grid() -> Vec<f64> {
    (0..9).map(|k| 10f64.powf(-5.0 + 0.5 * k as f64)).collect()
}

fn default_folds() -> usize {
    5
}
fn default_softplus_scale() -> f64 {
    DEFAULT_SOFTPLUS_SCALE
}
fn default_glm_penalty() -> f64 {
    crate::glm::MIN_RIDGE_PENALTY
}
fn default_true() -> bool {
    true
}
fn default_epsilon_fraction() -> f64 {
    0.01
}
fn default_transport_tol() -> f64 {
    1e-9
}
fn default_transport_iter() -> usize {
    200_000
}
fn default_lasso_sweeps() -> usize {
    10_000
}
fn default_lasso_tol() -> f64 {
    1e-8
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64, 64]
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    64
}
fn default_lr() -> f64 {
    1e-3
}

/// A transform class together with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MappingMethod {
    Ridge {
        #[serde(default = "default_lambda_grid")]
        lambda_grid: Vec<f64>,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        seed: u64,
    },
    Lasso {
        #[serde(default = "default_alpha_grid")]
        alpha_grid: Vec<f64>,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_lasso_sweeps")]
        max_sweeps: usize,
        #[serde(default = "default_lasso_tol")]
        tol: f64,
    },
    NonnegLasso {
        #[serde(default = "default_alpha_grid")]
        alpha_grid: Vec<f64>,
        #[serde(default = "default_folds")]
        folds: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_lasso_sweeps")]
        max_sweeps: usize,
        #[serde(default = "default_lasso_tol")]
        tol: f64,
    },
    SoftMatching {
        /// Entropic regularization relative to the correlation range.
        #[serde(default = "default_epsilon_fraction")]
        epsilon: f64,
        #[serde(default = "default_transport_iter")]
        max_iter: usize,
        #[serde(default = "default_transport_tol")]
        tol: f64,
    },
    ExactZippering {
        #[serde(default = "default_softplus_scale")]
        c: f64,
        #[serde(default = "default_glm_penalty")]
        ridge_penalty: f64,
        /// When false the source is taken as already pre-nonlinearity.
        #[serde(default = "default_true")]
        invert_source: bool,
    },
    ApproxZippering {
        #[serde(default = "default_glm_penalty")]
        ridge_penalty: f64,
    },
    Mlp {
        #[serde(default = "default_hidden")]
        hidden_layout: Vec<usize>,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_batch")]
        batch: usize,
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Softplus-link GLM on the raw source with c = 1.
    LinearNonlinear {
        #[serde(default = "default_glm_penalty")]
        ridge_penalty: f64,
    },
}

impl MappingMethod {
    pub fn ridge() -> Self {
        MappingMethod::Ridge {
            lambda_grid: default_lambda_grid(),
            folds: default_folds(),
            seed: 0,
        }
    }

    pub fn lasso(nonnegative: bool) -> Self {
        let (alpha_grid, folds, seed, max_sweeps, tol) = (
            default_alpha_grid(),
            default_folds(),
            0,
            default_lasso_sweeps(),
            default_lasso_tol(),
        );
        if nonnegative {
            MappingMethod::NonnegLasso { alpha_grid, folds, seed, max_sweeps, tol }
        } else {
            MappingMethod::Lasso { alpha_grid, folds, seed, max_sweeps, tol }
        }
    }

    pub fn soft_matching() -> Self {
        MappingMethod::SoftMatching {
            epsilon: default_epsilon_fraction(),
            max_iter: default_transport_iter(),
            tol: default_transport_tol(),
        }
    }

    pub fn exact_zippering(c: f64) -> Self {
        MappingMethod::ExactZippering {
            c,
            ridge_penalty: default_glm_penalty(),
            invert_source: true,
        }
    }

    pub fn approx_zippering() -> Self {
        MappingMethod::ApproxZippering {
            ridge_penalty: default_glm_penalty(),
        }
    }

    pub fn mlp(seed: u64) -> Self {
        MappingMethod::Mlp {
            hidden_layout: default_hidden(),
            epochs: default_epochs(),
            batch: default_batch(),
            lr: default_lr(),
            seed,
        }
    }

    pub fn linear_nonlinear() -> Self {
        MappingMethod::LinearNonlinear {
            ridge_penalty: default_glm_penalty(),
        }
    }

    /// Parses a bare kind name into the method with default hyperparameters.
    pub fn from_kind(kind: &str) -> Result<Self> {
        Ok(match kind {
            "ridge" => Self::ridge(),
            "lasso" => Self::lasso(false),
            "nonneg_lasso" => Self::lasso(true),
            "soft_matching" => Self::soft_matching(),
            "exact_zippering" => Self::exact_zippering(DEFAULT_SOFTPLUS_SCALE),
            "approx_zippering" => Self::approx_zippering(),
            "mlp" => Self::mlp(0),
            "linear_nonlinear" => Self::linear_nonlinear(),
            other => return Err(IatcError::Config(format!("unknown method kind {other:?}"))),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MappingMethod::Ridge { .. } => "ridge",
            MappingMethod::Lasso { .. } => "lasso",
            MappingMethod::NonnegLasso { .. } => "nonneg_lasso",
            MappingMethod::SoftMatching { .. } => "soft_matching",
            MappingMethod::ExactZippering { .. } => "exact_zippering",
            MappingMethod::ApproxZippering { .. } => "approx_zippering",
            MappingMethod::Mlp { .. } => "mlp",
            MappingMethod::LinearNonlinear { .. } => "linear_nonlinear",
        }
    }

    /// Same method with its random seed (if it has one) replaced.
    pub fn with_seed(&self, new_seed: u64) -> Self {
        let mut m = self.clone();
        match &mut m {
            MappingMethod::Ridge { seed, .. }
            | MappingMethod::Lasso { seed, .. }
            | MappingMethod::NonnegLasso { seed, .. }
            | MappingMethod::Mlp { seed, .. } => *seed = new_seed,
            _ => {}
        }
        m
    }

    pub fn fit(&self, source: &DMatrix<f64>, target: &DMatrix<f64>) -> Result<FittedMap> {
        if source.nrows() != target.nrows() {
            return Err(IatcError::dims(format!(
                "source has {} stimuli, target {}",
                source.nrows(),
                target.nrows()
            )));
        }
        match self {
            MappingMethod::Ridge { lambda_grid, folds, seed } => {
                fit_ridge(source, target, lambda_grid, *folds, *seed)
            }
            MappingMethod::Lasso { alpha_grid, folds, seed, max_sweeps, tol } => fit_lasso(
                source,
                target,
                alpha_grid,
                *folds,
                *seed,
                false,
                &LassoOptions { max_sweeps: *max_sweeps, tol: *tol },
            ),
            MappingMethod::NonnegLasso { alpha_grid, folds, seed, max_sweeps, tol } => fit_lasso(
                source,
                target,
                alpha_grid,
                *folds,
                *seed,
                true,
                &LassoOptions { max_sweeps: *max_sweeps, tol: *tol },
            ),
            MappingMethod::SoftMatching { epsilon, max_iter, tol } => fit_soft_matching(
                source,
                target,
                &SoftMatchingOptions {
                    epsilon_fraction: *epsilon,
                    max_iter: *max_iter,
                    tol: *tol,
                },
            ),
            MappingMethod::ExactZippering { c, ridge_penalty, invert_source } => {
                fit_exact_zippering(source, target, *c, *ridge_penalty, *invert_source)
            }
            MappingMethod::ApproxZippering { ridge_penalty } => {
                fit_approx_zippering(source, target, *ridge_penalty)
            }
            MappingMethod::Mlp { hidden_layout, epochs, batch, lr, seed } => fit_mlp(
                source,
                target,
                &MlpOptions {
                    hidden_layout: hidden_layout.clone(),
                    epochs: *epochs,
                    batch: *batch,
                    lr: *lr,
                    seed: *seed,
                },
            ),
            MappingMethod::LinearNonlinear { ridge_penalty } => {
                fit_linear_nonlinear(source, target, *ridge_penalty)
            }
        }
    }

    pub fn fit_matrices(&self, source: &ResponseMatrix, target: &ResponseMatrix) -> Result<FittedMap> {
        let mut map = self.fit(source.values(), target.values())?;
        map.target_neuron_ids = Some(target.neuron_ids().to_vec());
        Ok(map)
    }
}

/// Dense linear map `y = x·W + b`; `weights[i][j]` links source i to target j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weights: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

pub(crate) fn to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn from_nested(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

impl LinearParams {
    pub fn from_parts(w: &DMatrix<f64>, intercept: Vec<f64>) -> Self {
        LinearParams {
            weights: to_nested(w),
            intercept,
        }
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        from_nested(&self.weights, self.intercept.len())
    }

    pub(crate) fn apply_parts(w: &DMatrix<f64>, b: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * w;
        for (j, bj) in b.iter().enumerate() {
            out.column_mut(j).add_scalar_mut(*bj);
        }
        out
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(IatcError::dims(format!(
                "source has {} neurons, map expects {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        Ok(Self::apply_parts(&self.weight_matrix(), &self.intercept, x))
    }
}

/// Per-target-neuron GLMs applied after a fixed source preprocessing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmMapParams {
    /// Softplus scale used to unscale the source before inversion; `None`
    /// when the source is used as-is.
    pub invert_scale: Option<f64>,
    pub power: Option<PowerTransformer>,
    pub n_source: usize,
    pub glms: Vec<GlmFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapParams {
    Linear(LinearParams),
    Transport(TransportPlan),
    Glm(GlmMapParams),
    Mlp(Mlp),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub selected_regularization: Option<f64>,
    /// Mean validation R² per grid value when the penalty was cross-validated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMap {
    pub method: MappingMethod,
    pub params: MapParams,
    pub diagnostics: FitDiagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_neuron_ids: Option<Vec<String>>,
}

impl FittedMap {
    pub fn kind(&self) -> &'static str {
        self.method.kind()
    }

    pub fn n_targets(&self) -> usize {
        match &self.params {
            MapParams::Linear(p) => p.intercept.len(),
            MapParams::Transport(t) => t.target_mean.len(),
            MapParams::Glm(g) => g.glms.len(),
            MapParams::Mlp(m) => m.output_dim(),
        }
    }

    /// Predicted target responses, (source rows) × (target neurons).
    pub fn predict(&self, source: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match &self.params {
            MapParams::Linear(p) => p.apply(source),
            MapParams::Transport(t) => predict_soft_matching(t, source),
            MapParams::Glm(g) => zippering::predict_glm_map(g, source),
            MapParams::Mlp(m) => m.predict(source),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| IatcError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| IatcError::Serialization(e.to_string()))
    }
}

/// Mean over target neurons of per-neuron R², ignoring constant neurons.
pub(crate) fn mean_r2(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> f64 {
    let finite: Vec<f64> = r2_columns(truth, pred).into_iter().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NAN
    } else {
        mean(&finite)
    }
}

/// First index of the maximum (NaN never wins).
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.is_finite() && (!v[best].is_finite() || *x > v[best]) {
            best = i;
        }
    }
    best
}

/// K-fold cross-validation over a hyperparameter grid. `score_fold`
/// receives (fit X, fit Y, held X, held Y, fold index) and returns one
/// validation score per grid value. Returns the mean score per grid value.
pub(crate) fn cv_select<F>(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    folds: usize,
    seed: u64,
    grid_len: usize,
    mut score_fold: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>, usize) -> Result<Vec<f64>>,
{
    let parts = kfold(x.nrows(), folds, seed)?;
    let mut totals = vec![0.0; grid_len];
    for (f, (fit_idx, held_idx)) in parts.iter().enumerate() {
        let xf = x.select_rows(fit_idx);
        let yf = y.select_rows(fit_idx);
        let xh = x.select_rows(held_idx);
        let yh = y.select_rows(held_idx);
        let scores = score_fold(&xf, &yf, &xh, &yh, f)?;
        if scores.iter().all(|s| !s.is_finite()) {
            return Err(IatcError::DegenerateFold {
                fold: f,
                message: "no target neuron varies over the held-out stimuli".into(),
            });
        }
        for (t, s) in totals.iter_mut().zip(scores) {
            *t += if s.is_finite() { s } else { f64::NEG_INFINITY };
        }
    }
    Ok(totals.into_iter().map(|t| t / folds as f64).collect())
}
