//! Threshold neuron with a refractory period: in every refractory-length bin
//! a Gaussian input is drawn and the neuron fires once iff it exceeds the
//! threshold. Also fits candidate activation functions to the resulting
//! mean-count curve.

use nalgebra::{Matrix3, Vector3};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::error::{IatcError, Result};
use crate::rng::rng_from_seed;
use crate::transforms::softplus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpikingConfig {
    pub mu: f64,
    pub sigma: f64,
    pub threshold: f64,
    pub refractory_ms: f64,
    pub window_ms: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SpikingConfig {
    fn default() -> Self {
        SpikingConfig {
            mu: 0.0,
            sigma: 1.0,
            threshold: 0.0,
            refractory_ms: 1.0,
            window_ms: 100.0,
            trials: 100,
            seed: 0,
        }
    }
}

impl SpikingConfig {
    /// Number of refractory-length bins in the counting window.
    pub fn bins(&self) -> Result<usize> {
        let ratio = self.window_ms / self.refractory_ms;
        if !(self.refractory_ms > 0.0) || !(ratio >= 1.0) || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(IatcError::Config(format!(
                "window {} ms is not a positive multiple of the {} ms refractory period",
                self.window_ms, self.refractory_ms
            )));
        }
        Ok(ratio.round() as usize)
    }

    /// bins · Φ((mu - T) / sigma)
    pub fn analytic_mean(&self) -> Result<f64> {
        let bins = self.bins()?;
        Ok(bins as f64 * fire_probability(self.mu - self.threshold, self.sigma)?)
    }
}

fn fire_probability(drive: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(IatcError::Config(format!("input noise sigma must be > 0, got {sigma}")));
    }
    Ok(StatNormal::standard().cdf(drive / sigma))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeCounts {
    pub counts: Vec<u32>,
    pub mean: f64,
    pub analytic_mean: f64,
}

impl SpikeCounts {
    /// Standard error of the trial mean under the binomial count model.
    pub fn binomial_se(&self, bins: usize) -> f64 {
        let p = self.analytic_mean / bins as f64;
        (bins as f64 * p * (1.0 - p) / self.counts.len() as f64).sqrt()
    }
}

pub fn simulate_spike_counts(cfg: &SpikingConfig) -> Result<SpikeCounts> {
    let bins = cfg.bins()?;
    let analytic_mean = cfg.analytic_mean()?;
    if cfg.trials == 0 {
        return Err(IatcError::Config("need at least one trial".into()));
    }
    let input = Normal::new(cfg.mu, cfg.sigma).map_err(|e| IatcError::Config(e.to_string()))?;
    let mut rng = rng_from_seed(cfg.seed);
    let counts: Vec<u32> = (0..cfg.trials)
        .map(|_| (0..bins).filter(|_| input.sample(&mut rng) > cfg.threshold).count() as u32)
        .collect();
    let mean = counts.iter().map(|&c| f64::from(c)).sum::<f64>() / cfg.trials as f64;
    Ok(SpikeCounts {
        counts,
        mean,
        analytic_mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
    Relu,
    Exponential,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Softplus, Activation::Relu, Activation::Exponential];

    fn value(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(u),
            Activation::Relu => u.max(0.0),
            Activation::Exponential => u.min(700.0).exp(),
        }
    }

    fn slope(self, u: f64) -> f64 {
        match self {
            Activation::Softplus => crate::transforms::sigmoid(u),
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Exponential => u.min(700.0).exp(),
        }
    }
}

/// Least-squares fit of y = a · f(b · x + d).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub activation: Activation,
    pub a: f64,
    pub b: f64,
    pub d: f64,
    /// Residual sum of squares.
    pub residual: f64,
}

impl CandidateFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * self.activation.value(self.b * x + self.d)
    }
}

fn sse(act: Activation, p: &Vector3<f64>, x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(xi, yi)| (p[0] * act.value(p[1] * xi + p[2]) - yi).powi(2))
        .sum()
}

/// Levenberg-Marquardt from one starting point.
fn levenberg_marquardt(act: Activation, start: Vector3<f64>, x: &[f64], y: &[f64]) -> (Vector3<f64>, f64) {
    let mut p = start;
    let mut cost = sse(act, &p, x, y);
    let mut damping = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for (xi, yi) in x.iter().zip(y) {
            let u = p[1] * xi + p[2];
            let f = act.value(u);
            let g = p[0] * act.slope(u);
            let j = Vector3::new(f, g * xi, g);
            jtj += j * j.transpose();
            jtr += j * (p[0] * f - yi);
        }
        let mut improved = false;
        while damping < 1e12 {
            let mut lhs = jtj;
            for k in 0..3 {
                lhs[(k, k)] += damping * (jtj[(k, k)] + 1e-12);
            }
            let Some(step) = lhs.lu().solve(&(-jtr)) else {
                damping *= 10.0;
                continue;
            };
            let trial = p + step;
            let trial_cost = sse(act, &trial, x, y);
            if trial_cost.is_finite() && trial_cost < cost {
                let rel = (cost - trial_cost) / cost.max(1e-300);
                p = trial;
                cost = trial_cost;
                damping = (damping / 10.0).max(1e-12);
                improved = rel > 1e-14;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, cost)
}

/// Fits every candidate activation to (x, y) by multistart
/// Levenberg-Marquardt and reports each best fit.
pub fn fit_activation_candidates(x: &[f64], y: &[f64]) -> Result<Vec<CandidateFit>> {
    if x.len() != y.len() {
        return Err(IatcError::dims("grid and counts differ in length"));
    }
    if x.len() < 4 || x.iter().all(|v| *v == x[0]) {
        return Err(IatcError::InvalidData(
            "activation fit needs at least 4 distinct grid points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(IatcError::InvalidData("non-finite value in activation fit input".into()));
    }
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
    let span = hi - lo;
    let y_max = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut fits = Vec::new();
    for act in Activation::ALL {
        let mut best: Option<(Vector3<f64>, f64)> = None;
        for b_scale in [0.25, 1.0, 4.0] {
            for sign in [1.0, -1.0] {
                for centre in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let b = sign * b_scale * 4.0 / span;
                    let d = -b * (lo + centre * span);
                    let mut p = Vector3::new(1.0, b, d);
                    let f_max = x.iter().map(|xi| act.value(b * xi + d)).fold(0.0f64, f64::max);
                    p[0] = if f_max > 0.0 { y_max / f_max } else { 1.0 };
                    let (fit, cost) = levenberg_marquardt(act, p, x, y);
                    if best.as_ref().is_none_or(|(_, c)| cost < *c) {
                        best = Some((fit, cost));
                    }
                }
            }
        }
        let (p, residual) = best.expect("at least one start");
        fits.push(CandidateFit {
            activation: act,
            a: p[0],
            b: p[1],
            d: p[2],
            residual,
        });
    }
    Ok(fits)
}
