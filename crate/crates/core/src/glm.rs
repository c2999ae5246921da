//! Poisson GLM with a configurable inverse link, fitted by Fisher-scoring
//! IRLS with step-halving.
//!
//! The fitted model is `mu = link(x . weights + intercept)`. The objective is
//! the Poisson log-likelihood minus `ridge_penalty * |weights|^2`; the
//! intercept is never penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{IatcError, Result};
use crate::transforms::softplus::{sigmoid, softplus, softplus_inverse_unchecked};

/// Floor applied to the mean inside the working weights.
pub const MU_FLOOR: f64 = 1e-10;
/// Smallest penalty ever applied to the non-intercept weights.
pub const MIN_RIDGE_PENALTY: f64 = 1e-8;
/// Largest penalized score entry accepted at convergence.
const SCORE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InverseLink {
    /// mu = c * softplus(eta)
    ScaledSoftplus { c: f64 },
    /// mu = exp(eta)
    Exponential,
}

impl InverseLink {
    pub fn mean(&self, eta: f64) -> f64 {
        match *self {
            InverseLink::ScaledSoftplus { c } => c * softplus(eta),
            InverseLink::Exponential => eta.exp(),
        }
    }

    /// d mu / d eta
    pub fn derivative(&self, eta: f64) -> f64 {
        match *self {
            InverseLink::ScaledSoftplus { c } => c * sigmoid(eta),
            InverseLink::Exponential => eta.exp(),
        }
    }

    /// The linear predictor producing mean `mu` (mu > 0).
    pub fn linear_predictor(&self, mu: f64) -> f64 {
        match *self {
            InverseLink::ScaledSoftplus { c } => softplus_inverse_unchecked(mu / c),
            InverseLink::Exponential => mu.ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrlsOptions {
    pub ridge_penalty: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for IrlsOptions {
    fn default() -> Self {
        IrlsOptions {
            ridge_penalty: MIN_RIDGE_PENALTY,
            max_iter: 100,
            tol: 1e-8,
            max_halvings: 10,
        }
    }
}

impl IrlsOptions {
    pub fn effective_penalty(&self) -> f64 {
        self.ridge_penalty.max(MIN_RIDGE_PENALTY)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub link: InverseLink,
    /// Penalized deviance after initialization and after every accepted step.
    pub deviance_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Poisson deviance 2 Σ [y ln(y/mu) - (y - mu)].
pub fn poisson_deviance(y: &[f64], mu: &[f64]) -> f64 {
    2.0 * y
        .iter()
        .zip(mu)
        .map(|(&yi, &mi)| {
            let t = if yi > 0.0 { yi * (yi / mi).ln() } else { 0.0 };
            t - (yi - mi)
        })
        .sum::<f64>()
}

fn design_with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let (s, p) = x.shape();
    let mut xa = DMatrix::from_element(s, p + 1, 1.0);
    xa.columns_mut(0, p).copy_from(x);
    xa
}

fn linear_predictor(xa: &DMatrix<f64>, theta: &DVector<f64>) -> DVector<f64> {
    xa * theta
}

fn penalized_deviance(
    y: &[f64],
    eta: &DVector<f64>,
    theta: &DVector<f64>,
    link: InverseLink,
    penalty: f64,
) -> f64 {
    let mu: Vec<f64> = eta.iter().map(|&e| link.mean(e)).collect();
    let p = theta.len() - 1;
    let ridge: f64 = theta.rows(0, p).iter().map(|t| t * t).sum();
    poisson_deviance(y, &mu) + 2.0 * penalty * ridge
}

/// Weighted ridge solve (XᵀWX + 2·penalty·D) θ = XᵀWz, D = I except for
/// the intercept.
fn weighted_solve(
    xa: &DMatrix<f64>,
    w: &[f64],
    z: &[f64],
    penalty: f64,
) -> Option<DVector<f64>> {
    let (s, k) = xa.shape();
    let mut xw = xa.clone();
    let mut zw = DVector::zeros(s);
    for i in 0..s {
        let sw = w[i].sqrt();
        xw.row_mut(i).scale_mut(sw);
        zw[i] = sw * z[i];
    }
    let mut m = xw.tr_mul(&xw);
    for j in 0..k - 1 {
        m[(j, j)] += 2.0 * penalty;
    }
    let rhs = xw.tr_mul(&zw);
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch.solve(&rhs));
    }
    m.lu().solve(&rhs)
}

/// Fits one Poisson GLM. `x` holds predictors only (S×P); the intercept is
/// added internally.
pub fn irls_fit(
    x: &DMatrix<f64>,
    y: &[f64],
    link: InverseLink,
    opts: &IrlsOptions,
) -> Result<GlmFit> {
    let (s, p) = x.shape();
    if y.len() != s {
        return Err(IatcError::dims(format!("{} responses for {s} design rows", y.len())));
    }
    if let Some(v) = y.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(IatcError::Domain(format!(
            "Poisson responses must be finite and nonnegative, found {v}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(IatcError::Domain("non-finite predictor".into()));
    }
    let penalty = opts.effective_penalty();
    let xa = design_with_intercept(x);

    let ybar = (y.iter().sum::<f64>() / s as f64).max(1e-6);
    let mut theta = DVector::zeros(p + 1);
    theta[p] = link.linear_predictor(ybar);
    let mut eta = linear_predictor(&xa, &theta);
    let mut dev = penalized_deviance(y, &eta, &theta, link, penalty);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;

    let mut w = vec![0.0; s];
    let mut z = vec![0.0; s];
    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        for i in 0..s {
            let e = eta[i];
            let mu = link.mean(e);
            let d = link.derivative(e).max(f64::MIN_POSITIVE);
            w[i] = d * d / mu.max(MU_FLOOR);
            z[i] = e + (y[i] - mu) / d;
        }
        let proposal = weighted_solve(&xa, &w, &z, penalty).ok_or_else(|| {
            IatcError::IrlsDivergence {
                neuron: None,
                message: format!("singular weighted system at iteration {iterations}"),
            }
        })?;
        if proposal.iter().any(|v| !v.is_finite()) {
            return Err(IatcError::IrlsDivergence {
                neuron: None,
                message: format!("non-finite coefficients at iteration {iterations}"),
            });
        }

        let mut step = &proposal - &theta;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand = &theta + &step;
            let cand_eta = linear_predictor(&xa, &cand);
            let cand_dev = penalized_deviance(y, &cand_eta, &cand, link, penalty);
            if cand_dev.is_finite() && cand_dev <= dev {
                accepted = Some((cand, cand_eta, cand_dev));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cand_eta, cand_dev)) = accepted else {
            // No descent direction left at floating-point resolution.
            if dev.is_finite() {
                converged = true;
                break;
            }
            return Err(IatcError::IrlsDivergence {
                neuron: None,
                message: "deviance is not finite".into(),
            });
        };
        let change = (dev - cand_dev).abs() / (cand_dev.abs() + 0.1);
        theta = cand;
        eta = cand_eta;
        dev = cand_dev;
        trace.push(dev);
        // the deviance flattens out before the score does
        if change < opts.tol && penalized_score(x, y, eta.as_slice(), theta.as_slice(), link, penalty) < SCORE_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(IatcError::IrlsNonConvergence {
            neuron: None,
            trace,
        });
    }
    Ok(GlmFit {
        weights: theta.rows(0, p).iter().copied().collect(),
        intercept: theta[p],
        link,
        deviance_trace: trace,
        converged,
        iterations,
    })
}

/// Infinity norm of Xᵀ((y-mu)·mu'/mu) - 2·penalty·w, the gradient of the
/// penalized log-likelihood; the intercept is unpenalized.
fn penalized_score(
    x: &DMatrix<f64>,
    y: &[f64],
    eta: &[f64],
    theta: &[f64],
    link: InverseLink,
    penalty: f64,
) -> f64 {
    let p = x.ncols();
    let mut grad = vec![0.0; p + 1];
    for (i, &e) in eta.iter().enumerate() {
        let mu = link.mean(e);
        let g = (y[i] - mu) * link.derivative(e) / mu;
        for j in 0..p {
            grad[j] += x[(i, j)] * g;
        }
        grad[p] += g;
    }
    for j in 0..p {
        grad[j] -= 2.0 * penalty * theta[j];
    }
    grad.iter().fold(0.0f64, |m, g| m.max(g.abs()))
}

impl GlmFit {
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(IatcError::dims(format!(
                "design has {} columns, fit expects {}",
                x.ncols(),
                self.weights.len()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                x.row(i)
                    .iter()
                    .zip(&self.weights)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + self.intercept
            })
            .collect())
    }

    /// Mean response `link(Xθ)`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .linear_predictor(x)?
            .into_iter()
            .map(|e| self.link.mean(e))
            .collect())
    }

    /// Infinity norm of the penalized score at the fitted coefficients.
    pub fn score_residual(&self, x: &DMatrix<f64>, y: &[f64], ridge_penalty: f64) -> Result<f64> {
        let eta = self.linear_predictor(x)?;
        let mut theta = self.weights.clone();
        theta.push(self.intercept);
        Ok(penalized_score(x, y, &eta, &theta, self.link, ridge_penalty))
    }
}

/// Convenience wrapper: `glm_predict(fit, X)`.
pub fn glm_predict(fit: &GlmFit, x: &DMatrix<f64>) -> Result<Vec<f64>> {
    fit.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn zero_weights_give_constant_softplus_prediction() {
        let fit = GlmFit {
            weights: vec![0.0, 0.0],
            intercept: 0.3,
            link: InverseLink::ScaledSoftplus { c: 100.0 },
            deviance_trace: vec![],
            converged: true,
            iterations: 0,
        };
        let x = DMatrix::from_fn(4, 2, |i, j| (i + j) as f64);
        for v in fit.predict(&x).unwrap() {
            assert!((v - 100.0 * softplus(0.3)).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_link_at_zero_is_one() {
        let fit = GlmFit {
            weights: vec![1.0],
            intercept: 0.0,
            link: InverseLink::Exponential,
            deviance_trace: vec![],
            converged: true,
            iterations: 0,
        };
        assert_eq!(fit.predict(&DMatrix::zeros(3, 1)).unwrap(), vec![1.0; 3]);
        assert!(fit.predict(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn negative_response_is_domain_error() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let r = irls_fit(&x, &[1.0, -1.0, 2.0], InverseLink::Exponential, &IrlsOptions::default());
        assert!(matches!(r, Err(IatcError::Domain(_))));
    }

    #[test]
    fn all_zero_response_drives_mean_to_floor() {
        let mut rng = rng_from_seed(4);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(200, 2, |_, _| n.sample(&mut rng));
        let fit = irls_fit(&x, &[0.0; 200], InverseLink::Exponential, &IrlsOptions::default()).unwrap();
        for v in fit.predict(&x).unwrap() {
            assert!(v <= 1e-10, "prediction {v}");
            assert!(v > 0.0);
        }
    }

    #[test]
    fn deviance_trace_is_non_increasing() {
        let mut rng = rng_from_seed(5);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(300, 3, |_, _| n.sample(&mut rng));
        let y: Vec<f64> = (0..300)
            .map(|i| {
                let eta = 0.5 + 0.8 * x[(i, 0)] - 0.4 * x[(i, 2)];
                Poisson::new(2.0 * softplus(eta)).unwrap().sample(&mut rng)
            })
            .collect();
        let fit = irls_fit(&x, &y, InverseLink::ScaledSoftplus { c: 2.0 }, &IrlsOptions::default())
            .unwrap();
        assert!(fit.converged);
        for w in fit.deviance_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(fit.predict(&x).unwrap().iter().all(|m| *m > 0.0));
    }

    #[test]
    fn constant_target_fits_intercept_only() {
        let mut rng = rng_from_seed(6);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(100, 3, |_, _| n.sample(&mut rng));
        let fit = irls_fit(&x, &[7.0; 100], InverseLink::Exponential, &IrlsOptions::default()).unwrap();
        assert!(fit.weights.iter().all(|w| w.abs() < 1e-8));
        let pred = fit.predict(&x).unwrap();
        assert!(pred.iter().all(|v| (v - 7.0).abs() < 1e-6));
    }

    #[test]
    fn non_convergence_reports_trace() {
        let mut rng = rng_from_seed(7);
        let n = Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(100, 2, |_, _| n.sample(&mut rng));
        let y: Vec<f64> = (0..100).map(|i| (3.0_f64 * x[(i, 0)]).exp().round()).collect();
        let opts = IrlsOptions { max_iter: 1, ..Default::default() };
        match irls_fit(&x, &y, InverseLink::Exponential, &opts) {
            Err(IatcError::IrlsNonConvergence { trace, .. }) => assert_eq!(trace.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
