//! Lasso by cyclic coordinate descent with soft-thresholding, optionally
//! constrained to nonnegative weights. Each target neuron is an independent
//! problem
//!
//! ```text
//! min_w  1/(2n) |y - Xw - b|² + α |w|₁      (w ≥ 0 when nonnegative)
//! ```
//!
//! with an unpenalized intercept handled by centering.

use nalgebra::{DMatrix, DVector};

use super::ridge::center;
use super::{cv_select, FitDiagnostics, FittedMap, LinearParams, MapParams, MappingMethod};
use crate::error::{IatcError, Result};
use crate::stats::column_means;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoOptions {
    pub max_sweeps: usize,
    /// Convergence threshold on the duality gap relative to |y|².
    pub tol: f64,
}

impl Default for LassoOptions {
    fn default() -> Self {
        LassoOptions {
            max_sweeps: 10_000,
            tol: 1e-8,
        }
    }
}

fn soft_threshold(rho: f64, t: f64, nonnegative: bool) -> f64 {
    if rho > t {
        rho - t
    } else if rho < -t && !nonnegative {
        rho + t
    } else {
        0.0
    }
}

/// Duality gap of the n-scaled problem 0.5|r|² + nα|w|₁ at residual `r`.
fn duality_gap(
    xc: &DMatrix<f64>,
    yc: &DVector<f64>,
    w: &DVector<f64>,
    r: &DVector<f64>,
    n_alpha: f64,
    nonnegative: bool,
) -> f64 {
    let xtr = xc.tr_mul(r);
    let dual_norm = if nonnegative {
        xtr.iter().fold(0.0f64, |m, v| m.max(*v))
    } else {
        xtr.amax()
    };
    let r2 = r.norm_squared();
    let konst = if dual_norm > n_alpha { n_alpha / dual_norm } else { 1.0 };
    let l1 = w.iter().map(|v| v.abs()).sum::<f64>();
    0.5 * r2 * (1.0 + konst * konst) + n_alpha * l1 - konst * r.dot(yc)
}

/// Coordinate descent for one centered target column, warm-started at `w`.
/// Returns the number of sweeps used and the final duality gap.
pub fn lasso_path_single(
    xc: &DMatrix<f64>,
    yc: &DVector<f64>,
    alpha: f64,
    w: &mut DVector<f64>,
    nonnegative: bool,
    opts: &LassoOptions,
) -> std::result::Result<(usize, f64), (usize, f64)> {
    let (n, p) = xc.shape();
    let n_alpha = n as f64 * alpha;
    let norms: Vec<f64> = (0..p).map(|j| xc.column(j).norm_squared()).collect();
    let y2 = yc.norm_squared();
    if y2 == 0.0 {
        w.fill(0.0);
        return Ok((0, 0.0));
    }
    let mut r = yc - xc * &*w;
    let mut gap = f64::INFINITY;
    for sweep in 1..=opts.max_sweeps {
        for j in 0..p {
            if norms[j] == 0.0 {
                w[j] = 0.0;
                continue;
            }
            let col = xc.column(j);
            let old = w[j];
            let rho = col.dot(&r) + norms[j] * old;
            let new = soft_threshold(rho, n_alpha, nonnegative) / norms[j];
            if new != old {
                r.axpy(old - new, &col, 1.0);
                w[j] = new;
            }
        }
        gap = duality_gap(xc, yc, w, &r, n_alpha, nonnegative);
        if gap <= opts.tol * y2 {
            return Ok((sweep, gap));
        }
    }
    Err((opts.max_sweeps, gap))
}

fn fit_columns(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha: f64,
    nonnegative: bool,
    opts: &LassoOptions,
    warm: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, Vec<f64>, usize)> {
    let xm = column_means(x);
    let ym = column_means(y);
    let xc = center(x, &xm);
    let (p, q) = (x.ncols(), y.ncols());
    let mut w_all = warm.cloned().unwrap_or_else(|| DMatrix::zeros(p, q));
    let mut max_sweeps = 0;
    for j in 0..q {
        let yc = y.column(j).add_scalar(-ym[j]);
        let mut w = w_all.column(j).into_owned();
        let sweeps = lasso_path_single(&xc, &yc, alpha, &mut w, nonnegative, opts).map_err(
            |(sweeps, gap)| IatcError::LassoNonConvergence {
                neuron: j,
                sweeps,
                gap,
            },
        )?;
        max_sweeps = max_sweeps.max(sweeps.0);
        w_all.set_column(j, &w);
    }
    let intercept = (0..q)
        .map(|j| ym[j] - (0..p).map(|i| xm[i] * w_all[(i, j)]).sum::<f64>())
        .collect();
    Ok((w_all, intercept, max_sweeps))
}

pub fn fit_lasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha_grid: &[f64],
    folds: usize,
    seed: u64,
    nonnegative: bool,
    opts: &LassoOptions,
) -> Result<FittedMap> {
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0)) {
        return Err(IatcError::Config("lasso α grid must be nonempty and positive".into()));
    }
    if (0..x.ncols()).all(|j| x.column(j).iter().all(|v| *v == x[(0, j)])) {
        return Err(IatcError::DegenerateDesign("all source columns are constant".into()));
    }
    // Walk the grid from strongest to weakest penalty so each fit warm-starts
    // from a sparser solution.
    let mut order: Vec<usize> = (0..alpha_grid.len()).collect();
    order.sort_by(|a, b| alpha_grid[*b].total_cmp(&alpha_grid[*a]));
    let cv_scores = cv_select(x, y, folds, seed, alpha_grid.len(), |xf, yf, xh, yh, _| {
        let mut scores = vec![f64::NAN; alpha_grid.len()];
        let mut warm: Option<DMatrix<f64>> = None;
        for &k in &order {
            let (w, b, _) = fit_columns(xf, yf, alpha_grid[k], nonnegative, opts, warm.as_ref())?;
            scores[k] = super::mean_r2(yh, &LinearParams::apply_parts(&w, &b, xh));
            warm = Some(w);
        }
        Ok(scores)
    })?;
    let best = super::argmax(&cv_scores);
    let alpha = alpha_grid[best];
    let (w, b, sweeps) = fit_columns(x, y, alpha, nonnegative, opts, None)?;
    let method = if nonnegative {
        MappingMethod::NonnegLasso {
            alpha_grid: alpha_grid.to_vec(),
            folds,
            seed,
            max_sweeps: opts.max_sweeps,
            tol: opts.tol,
        }
    } else {
        MappingMethod::Lasso {
            alpha_grid: alpha_grid.to_vec(),
            folds,
            seed,
            max_sweeps: opts.max_sweeps,
            tol: opts.tol,
        }
    };
    Ok(FittedMap {
        method,
        params: MapParams::Linear(LinearParams::from_parts(&w, b)),
        diagnostics: FitDiagnostics {
            iterations: sweeps,
            converged: true,
            selected_regularization: Some(alpha),
            cv_scores: Some(cv_scores),
            ..Default::default()
        },
        target_neuron_ids: None,
    })
}

/// Lasso at a single α without cross-validation.
pub fn fit_lasso_fixed(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    alpha: f64,
    nonnegative: bool,
    opts: &LassoOptions,
) -> Result<LinearParams> {
    let (w, b, _) = fit_columns(x, y, alpha, nonnegative, opts, None)?;
    Ok(LinearParams::from_parts(&w, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Normal, StandardNormal};

    #[test]
    fn huge_alpha_zeroes_everything() {
        let mut rng = rng_from_seed(1);
        let x = DMatrix::from_fn(60, 4, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(60, 2, |i, j| x[(i, j)] * 2.0 + 5.0);
        let p = fit_lasso_fixed(&x, &y, 1e6, false, &LassoOptions::default()).unwrap();
        assert!(p.weights.iter().flatten().all(|w| *w == 0.0));
        let pred = p.apply(&x).unwrap();
        let ym = column_means(&y);
        for j in 0..2 {
            assert!(pred.column(j).iter().all(|v| (v - ym[j]).abs() < 1e-12));
        }
    }

    #[test]
    fn non_convergence_reports_gap() {
        let mut rng = rng_from_seed(2);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(40, 10, |_, _| noise.sample(&mut rng));
        let y = DMatrix::from_fn(40, 1, |i, _| x[(i, 0)] + x[(i, 1)] + noise.sample(&mut rng));
        let opts = LassoOptions { max_sweeps: 1, tol: 1e-14 };
        match fit_lasso_fixed(&x, &y, 1e-3, false, &opts) {
            Err(IatcError::LassoNonConvergence { gap, sweeps, .. }) => {
                assert_eq!(sweeps, 1);
                assert!(gap > 0.0);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn nonnegative_never_goes_negative() {
        let mut rng = rng_from_seed(3);
        let x = DMatrix::from_fn(100, 5, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(100, 1, |i, _| x[(i, 0)] - 2.0 * x[(i, 1)] + 0.5 * x[(i, 4)]);
        let p = fit_lasso_fixed(&x, &y, 1e-3, true, &LassoOptions::default()).unwrap();
        assert!(p.weights.iter().flatten().all(|w| *w >= 0.0));
        assert_eq!(p.weights[1][0], 0.0);
    }
}
