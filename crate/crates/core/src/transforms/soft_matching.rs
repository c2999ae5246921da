//! Soft matching: an optimal transport plan between source and target
//! neurons with uniform marginals that maximizes the expected correlation
//! Σ T∘C, used as a predictive map.
//!
//! The plan is computed by log-domain Sinkhorn scaling with ε-annealing,
//! polished by Newton steps at the final ε, then rounded onto the exact
//! transport polytope.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{from_nested, to_nested, FitDiagnostics, FittedMap, MapParams, MappingMethod};
use crate::error::{IatcError, Result};
use crate::stats::{column_means, column_stds};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftMatchingOptions {
    /// ε as a fraction of (max C - min C).
    pub epsilon_fraction: f64,
    pub max_iter: usize,
    /// L1 marginal error at which scaling stops.
    pub tol: f64,
}

impl Default for SoftMatchingOptions {
    fn default() -> Self {
        SoftMatchingOptions {
            epsilon_fraction: 0.01,
            max_iter: 200_000,
            tol: 1e-9,
        }
    }
}

/// Fitted plan plus the train-set statistics needed for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    /// N_X × N_Y transport matrix.
    pub plan: Vec<Vec<f64>>,
    /// N_X × N_Y train-set Pearson correlations.
    pub correlation: Vec<Vec<f64>>,
    pub source_mean: Vec<f64>,
    pub source_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    /// Σ T∘C.
    pub score: f64,
}

impl TransportPlan {
    pub fn plan_matrix(&self) -> DMatrix<f64> {
        from_nested(&self.plan, self.target_mean.len())
    }

    pub fn correlation_matrix(&self) -> DMatrix<f64> {
        from_nested(&self.correlation, self.target_mean.len())
    }
}

/// Pearson correlations between every source column and every target column.
pub fn correlation_matrix(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    xs: (&[f64], &[f64]),
    ys: (&[f64], &[f64]),
) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let zx = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| (x[(i, j)] - xs.0[j]) / xs.1[j]);
    let zy = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| (y[(i, j)] - ys.0[j]) / ys.1[j]);
    (zx.tr_mul(&zy) / n).map(|v| v.clamp(-1.0, 1.0))
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Entropic plan maximizing Σ T∘C - ε·KL, with uniform marginals.
/// Returns the plan and the number of iterations used.
fn sinkhorn_plan(c: &DMatrix<f64>, opts: &SoftMatchingOptions) -> Result<(DMatrix<f64>, usize)> {
    let (nx, ny) = c.shape();
    let range = c.max() - c.min();
    if !(range > 0.0) {
        return Ok((DMatrix::from_element(nx, ny, 1.0 / (nx * ny) as f64), 0));
    }
    let problem = Scaling {
        c,
        log_a: -(nx as f64).ln(),
        log_b: -(ny as f64).ln(),
    };
    let eps_target = opts.epsilon_fraction * range;
    let mut f = vec![0.0; nx];
    let mut eps = range.max(eps_target);
    let mut iterations = 0;
    // Scaling only needs to bring each stage near its optimum: earlier stages
    // are warm starts and the last one is finished by Newton steps.
    let coarse = opts.tol.max(1e-3);
    loop {
        let last_stage = eps <= eps_target;
        // plain scaling gets every stage to a coarse tolerance; the last
        // stage is then polished by Newton steps on the semi-dual
        let mut err = problem.row_error(&f, eps);
        while err >= coarse {
            let block = 10.min(opts.max_iter.saturating_sub(iterations));
            if block == 0 {
                return Err(IatcError::TransportNonConvergence { iterations, error: err });
            }
            for _ in 0..block {
                problem.sinkhorn_step(&mut f, eps);
            }
            iterations += block;
            err = problem.row_error(&f, eps);
        }
        if last_stage {
            while err >= opts.tol {
                if iterations >= opts.max_iter {
                    return Err(IatcError::TransportNonConvergence { iterations, error: err });
                }
                iterations += 1;
                if !problem.newton_step(&mut f, eps) {
                    problem.sinkhorn_step(&mut f, eps);
                }
                err = problem.row_error(&f, eps);
            }
            break;
        }
        eps = (eps * 0.5).max(eps_target);
    }
    let g = problem.column_potentials(&f, eps);
    Ok((problem.plan(&f, &g, eps), iterations))
}

/// Log-domain scaling problem with uniform marginals. Row potentials `f`
/// are the free variables; column potentials are always the exact
/// maximizers given `f`, so column sums are feasible by construction.
struct Scaling<'a> {
    c: &'a DMatrix<f64>,
    log_a: f64,
    log_b: f64,
}

impl Scaling<'_> {
    fn column_potentials(&self, f: &[f64], eps: f64) -> Vec<f64> {
        let c = self.c;
        (0..c.ncols())
            .map(|j| eps * (self.log_b - log_sum_exp((0..c.nrows()).map(|i| (c[(i, j)] + f[i]) / eps))))
            .collect()
    }

    fn plan(&self, f: &[f64], g: &[f64], eps: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.c.nrows(), self.c.ncols(), |i, j| ((self.c[(i, j)] + f[i] + g[j]) / eps).exp())
    }

    fn sinkhorn_step(&self, f: &mut [f64], eps: f64) {
        let g = self.column_potentials(f, eps);
        let c = self.c;
        for (i, fi) in f.iter_mut().enumerate() {
            let lse = log_sum_exp((0..c.ncols()).map(|j| (c[(i, j)] + g[j]) / eps));
            *fi = eps * (self.log_a - lse);
        }
    }

    /// L1 deviation of the row sums from the uniform marginal.
    fn row_error(&self, f: &[f64], eps: f64) -> f64 {
        let g = self.column_potentials(f, eps);
        let a = self.log_a.exp();
        self.plan(f, &g, eps).row_iter().map(|r| (r.sum() - a).abs()).sum()
    }

    /// Concave semi-dual objective Σ a f + Σ b g(f).
    fn objective(&self, f: &[f64], eps: f64) -> f64 {
        let g = self.column_potentials(f, eps);
        self.log_a.exp() * f.iter().sum::<f64>() + self.log_b.exp() * g.iter().sum::<f64>()
    }

    /// One damped Newton step on the semi-dual. Returns false when no
    /// ascent step could be found.
    fn newton_step(&self, f: &mut [f64], eps: f64) -> bool {
        let nx = f.len();
        let g = self.column_potentials(f, eps);
        let p = self.plan(f, &g, eps);
        let a = self.log_a.exp();
        let b = self.log_b.exp();
        let rows: Vec<f64> = p.row_iter().map(|r| r.sum()).collect();
        let grad = DVector::from_iterator(nx, rows.iter().map(|r| a - r));
        // Jacobian of the row sums: (diag(r) - P diag(1/b) Pᵀ) / ε
        let mut jac = -(&p * p.transpose()) / b;
        for (i, r) in rows.iter().enumerate() {
            jac[(i, i)] += r;
        }
        jac /= eps;
        let eig = jac.symmetric_eigen();
        let top = eig.eigenvalues.amax();
        let mut step = DVector::zeros(nx);
        for (k, lambda) in eig.eigenvalues.iter().enumerate() {
            if *lambda > 1e-13 * top {
                let v = eig.eigenvectors.column(k);
                step += v * (v.dot(&grad) / lambda);
            }
        }
        // near the optimum the objective gain drops below rounding, so a
        // smaller marginal error also counts as progress
        let base = self.objective(f, eps);
        let base_err = grad.iter().map(|v| v.abs()).sum::<f64>();
        let mut t = 1.0;
        while t > 1e-10 {
            let trial: Vec<f64> = f.iter().zip(step.iter()).map(|(fi, d)| fi + t * d).collect();
            let value = self.objective(&trial, eps);
            if value.is_finite() && (value > base || self.row_error(&trial, eps) < base_err) {
                f.copy_from_slice(&trial);
                return true;
            }
            t *= 0.5;
        }
        false
    }
}

/// Projects a nonnegative matrix onto the transport polytope with row sums
/// `a` and column sums `b` (scale down overfull rows and columns, then add
/// a rank-one correction for the missing mass).
pub fn round_to_marginals(t: &DMatrix<f64>, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let (nx, ny) = t.shape();
    let mut x = t.clone();
    for i in 0..nx {
        let r: f64 = x.row(i).sum();
        if r > a[i] {
            x.row_mut(i).scale_mut(a[i] / r);
        }
    }
    for j in 0..ny {
        let s: f64 = x.column(j).sum();
        if s > b[j] {
            x.column_mut(j).scale_mut(b[j] / s);
        }
    }
    let err_r: Vec<f64> = (0..nx).map(|i| (a[i] - x.row(i).sum()).max(0.0)).collect();
    let err_c: Vec<f64> = (0..ny).map(|j| (b[j] - x.column(j).sum()).max(0.0)).collect();
    let total: f64 = err_r.iter().sum();
    if total > 0.0 {
        for i in 0..nx {
            for j in 0..ny {
                x[(i, j)] += err_r[i] * err_c[j] / total;
            }
        }
    }
    x
}

pub fn fit_soft_matching(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    opts: &SoftMatchingOptions,
) -> Result<FittedMap> {
    if x.nrows() < 3 {
        return Err(IatcError::TooFewStimuli(format!(
            "soft matching needs at least 3 training stimuli, got {}",
            x.nrows()
        )));
    }
    let (xm, xs) = (column_means(x), column_stds(x));
    let (ym, ys) = (column_means(y), column_stds(y));
    if let Some(i) = xs.iter().position(|s| !(*s > 0.0)) {
        return Err(IatcError::ZeroVarianceNeuron { role: "source".into(), index: i });
    }
    if let Some(j) = ys.iter().position(|s| !(*s > 0.0)) {
        return Err(IatcError::ZeroVarianceNeuron { role: "target".into(), index: j });
    }
    let c = correlation_matrix(x, y, (&xm, &xs), (&ym, &ys));
    let (raw, iterations) = sinkhorn_plan(&c, opts)?;
    let (nx, ny) = c.shape();
    let a = vec![1.0 / nx as f64; nx];
    let b = vec![1.0 / ny as f64; ny];
    let plan = round_to_marginals(&raw, &a, &b);
    let score = plan.component_mul(&c).sum();
    Ok(FittedMap {
        method: MappingMethod::SoftMatching {
            epsilon: opts.epsilon_fraction,
            max_iter: opts.max_iter,
            tol: opts.tol,
        },
        params: MapParams::Transport(TransportPlan {
            plan: to_nested(&plan),
            correlation: to_nested(&c),
            source_mean: xm,
            source_std: xs,
            target_mean: ym,
            target_std: ys,
            score,
        }),
        diagnostics: FitDiagnostics {
            iterations,
            converged: true,
            selected_regularization: Some(opts.epsilon_fraction * (c.max() - c.min())),
            ..Default::default()
        },
        target_neuron_ids: None,
    })
}

/// Ŷ_j = N_Y σ(Y_j) Σ_i z(X_i) T_ij C_ij + mean(Y_j), with train-set
/// statistics.
pub fn predict_soft_matching(t: &TransportPlan, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let nx = t.source_mean.len();
    let ny = t.target_mean.len();
    if x.ncols() != nx {
        return Err(IatcError::dims(format!(
            "source has {} neurons, plan expects {nx}",
            x.ncols()
        )));
    }
    let z = DMatrix::from_fn(x.nrows(), nx, |i, k| (x[(i, k)] - t.source_mean[k]) / t.source_std[k]);
    let w = t.plan_matrix().component_mul(&t.correlation_matrix());
    let mut out = z * w;
    for j in 0..ny {
        let scale = ny as f64 * t.target_std[j];
        out.column_mut(j)
            .apply(|v| *v = *v * scale + t.target_mean[j]);
    }
    Ok(out)
}
