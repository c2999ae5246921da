//! Synthetic data: the threshold spiking neuron, Gamma-noise softplus
//! sampling, and a layered population of subjects sharing teacher latents.

mod population;
mod spiking;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Gamma, Normal};

use crate::data::{ResponseMatrix, ResponseProfile, TrialTensor};
use crate::error::{IatcError, Result};
use crate::rng::rng_from_seed;
use crate::transforms::softplus;

pub use population::{generate_population, teacher_model, PopulationConfig, SCALE_KEY};
pub use spiking::{
    fit_activation_candidates, simulate_spike_counts, Activation, CandidateFit, SpikeCounts,
    SpikingConfig,
};

/// Rates and per-trial samples of a noisy softplus population.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    /// c · softplus(pre)
    pub rates: DMatrix<f64>,
    pub counts: TrialTensor,
}

/// Draws one Gamma(shape = rate, scale = 1) sample per cell.
pub(crate) fn gamma_trial(rates: &DMatrix<f64>, rng: &mut crate::rng::Rng) -> DMatrix<f64> {
    rates.map(|lambda| {
        // softplus underflows to 0 only for pre < -745; keep the shape valid
        let shape = lambda.max(f64::MIN_POSITIVE);
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng)
    })
}

/// Rates c · softplus(pre) with `trials` Gamma samples per cell, which has
/// the mean and variance of a Poisson count at that rate.
pub fn sample_noisy_softplus(pre: &DMatrix<f64>, c: f64, trials: usize, seed: u64) -> Result<NoisySample> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(IatcError::Config(format!("softplus scale must be positive, got {c}")));
    }
    if trials == 0 {
        return Err(IatcError::Config("need at least one trial".into()));
    }
    if pre.iter().any(|v| !v.is_finite()) {
        return Err(IatcError::InvalidData("non-finite pre-activation".into()));
    }
    let rates = pre.map(|v| c * softplus(v));
    let mut rng = rng_from_seed(seed);
    let samples = (0..trials).map(|_| gamma_trial(&rates, &mut rng)).collect();
    Ok(NoisySample {
        counts: TrialTensor::new(samples, true)?,
        rates,
    })
}

/// Copy of `profile` with `extra` independent standard-normal neurons
/// appended.
pub fn spurious_model_variant(profile: &ResponseProfile, extra: usize, seed: u64) -> Result<ResponseProfile> {
    if extra == 0 {
        return Ok(profile.clone());
    }
    let s = profile.matrix.n_stimuli();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = rng_from_seed(seed);
    let noise = DMatrix::from_fn(s, extra, |_, _| normal.sample(&mut rng));
    let ids = (0..extra).map(|k| format!("spurious{k}")).collect();
    let noise = ResponseMatrix::new(noise, profile.matrix.stimulus_ids().to_vec(), ids)?;
    let mut out = profile.clone();
    out.matrix = profile.matrix.hconcat(&noise)?;
    out.trials = None;
    out.ncsnr = None;
    Ok(out)
}
