//! Trial-noise correction of predictivity scores.
//!
//! Two schemes: a split-half bootstrap with Spearman-Brown corrected
//! reliabilities (for targets with many trials), and division of R² by a
//! per-neuron noise ceiling derived from ncsnr (for targets with few trials).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_stimuli, SplitSpec, TrialTensor};
use crate::error::{IatcError, Result};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed};
use crate::stats::{nan_median, pearson_columns};
use crate::transforms::MappingMethod;

/// 2r / (1 + r): reliability of the full set from a split-half correlation.
pub fn spearman_brown(r: f64) -> Result<f64> {
    if !(r > -1.0 && r <= 1.0) {
        return Err(IatcError::Domain(format!(
            "Spearman-Brown needs r in (-1, 1], got {r}"
        )));
    }
    Ok(2.0 * r / (1.0 + r))
}

/// Trial averages over two disjoint halves of the trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitHalfSample {
    pub half1: DMatrix<f64>,
    pub half2: DMatrix<f64>,
    pub seed: u64,
}

/// Randomly partitions the trials into halves whose sizes differ by at most one.
pub fn split_half(trials: &TrialTensor, seed: u64) -> Result<SplitHalfSample> {
    let t = trials.trial_count();
    if t < 2 {
        return Err(IatcError::InvalidData(format!(
            "split-half correction needs at least 2 trials, got {t}"
        )));
    }
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let (a, b) = order.split_at(t / 2);
    Ok(SplitHalfSample {
        half1: trials.average_of(a),
        half2: trials.average_of(b),
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions {
            n_boot: 100,
            n_splits: 10,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl BootstrapOptions {
    /// Reduced setting for expensive methods: 16 samples, one split.
    pub fn fast(seed: u64) -> Self {
        BootstrapOptions {
            n_boot: 16,
            n_splits: 1,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedScore {
    /// Median over neurons of the sample-averaged corrected correlation.
    pub corrected: f64,
    /// Same aggregation applied to the uncorrected numerator.
    pub raw: f64,
    pub per_neuron_corrected: Vec<f64>,
    /// (neuron, sample) cells dropped for a non-positive denominator term.
    pub excluded_cells: usize,
    /// Neurons with no usable sample at all; left out of the median.
    pub excluded_neurons: usize,
    /// Whether any neuron's corrected score exceeds 1.
    pub exceeds_one: bool,
}

struct SampleResult {
    numerator: Vec<f64>,
    ratio: Vec<f64>,
}

fn bootstrap_sample(
    model: &DMatrix<f64>,
    trials: &TrialTensor,
    method: &MappingMethod,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<SampleResult> {
    let halves = split_half(trials, seed)?;
    let x_train = model.select_rows(train);
    let x_test = model.select_rows(test);
    let pred1 = method.fit(&x_train, &halves.half1.select_rows(train))?.predict(&x_test)?;
    let pred2 = method.fit(&x_train, &halves.half2.select_rows(train))?.predict(&x_test)?;
    let s1 = halves.half1.select_rows(test);
    let s2 = halves.half2.select_rows(test);
    let numerator = pearson_columns(&pred1, &s2);
    let pred_rel = pearson_columns(&pred1, &pred2);
    let target_rel = pearson_columns(&s1, &s2);
    let ratio = (0..numerator.len())
        .map(|j| {
            let a = spearman_brown(pred_rel[j]).unwrap_or(f64::NAN);
            let b = spearman_brown(target_rel[j]).unwrap_or(f64::NAN);
            if a > 0.0 && b > 0.0 {
                numerator[j] / (a * b).sqrt()
            } else {
                f64::NAN
            }
        })
        .collect();
    Ok(SampleResult { numerator, ratio })
}

/// Split-half bootstrap noise correction of model → target predictivity
/// (Pearson correlation). `model` holds the source responses for every
/// stimulus; `trials` holds the target's per-trial responses.
pub fn corrected_predictivity_bootstrap(
    model: &DMatrix<f64>,
    trials: &TrialTensor,
    method: &MappingMethod,
    opts: &BootstrapOptions,
) -> Result<CorrectedScore> {
    let (s, n) = trials.shape();
    if model.nrows() != s {
        return Err(IatcError::dims(format!(
            "model has {} stimuli, target trials have {s}",
            model.nrows()
        )));
    }
    if opts.n_boot == 0 || opts.n_splits == 0 {
        return Err(IatcError::Config("n_boot and n_splits must be positive".into()));
    }
    let tasks: Vec<(usize, usize)> = (0..opts.n_splits)
        .flat_map(|sp| (0..opts.n_boot).map(move |b| (sp, b)))
        .collect();
    let split_seed = derive_seed(opts.seed, "split");
    let boot_seed = derive_seed(opts.seed, "bootstrap");
    let splits = (0..opts.n_splits)
        .map(|sp| {
            split_stimuli(
                s,
                &SplitSpec {
                    train_fraction: opts.train_fraction,
                    seed: derive_indexed(split_seed, sp as u64),
                    ..Default::default()
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let samples = tasks
        .par_iter()
        .map(|&(sp, b)| {
            let seed = derive_indexed(boot_seed, (sp * opts.n_boot + b) as u64);
            bootstrap_sample(model, trials, method, &splits[sp].train, &splits[sp].test, seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut excluded_cells = 0;
    let mut per_neuron_corrected = Vec::with_capacity(n);
    let mut per_neuron_raw = Vec::with_capacity(n);
    for j in 0..n {
        let (mut sum, mut count) = (0.0, 0usize);
        let (mut raw_sum, mut raw_count) = (0.0, 0usize);
        for sample in &samples {
            let r = sample.ratio[j];
            if r.is_finite() {
                sum += r;
                count += 1;
            } else {
                excluded_cells += 1;
            }
            if sample.numerator[j].is_finite() {
                raw_sum += sample.numerator[j];
                raw_count += 1;
            }
        }
        per_neuron_corrected.push(if count > 0 { sum / count as f64 } else { f64::NAN });
        per_neuron_raw.push(if raw_count > 0 { raw_sum / raw_count as f64 } else { f64::NAN });
    }
    let excluded_neurons = per_neuron_corrected.iter().filter(|v| v.is_nan()).count();
    Ok(CorrectedScore {
        corrected: nan_median(&per_neuron_corrected),
        raw: nan_median(&per_neuron_raw),
        exceeds_one: per_neuron_corrected.iter().any(|v| *v > 1.0),
        per_neuron_corrected,
        excluded_cells,
        excluded_neurons,
    })
}

/// Per-neuron noise ceiling in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCeiling {
    pub values: Vec<f64>,
}

impl NoiseCeiling {
    /// Ceiling of 1 everywhere, used when the target is noiseless.
    pub fn unit(n: usize) -> Self {
        NoiseCeiling { values: vec![1.0; n] }
    }
}

/// ncsnr² / (ncsnr² + 1/n) per neuron.
pub fn nc_ceiling(ncsnr: &[f64], n_trials: usize) -> Result<NoiseCeiling> {
    if n_trials == 0 {
        return Err(IatcError::Domain("noise ceiling needs at least one trial".into()));
    }
    if let Some(bad) = ncsnr.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(IatcError::Domain(format!("ncsnr must be finite and >= 0, got {bad}")));
    }
    let inv = 1.0 / n_trials as f64;
    Ok(NoiseCeiling {
        values: ncsnr.iter().map(|s| s * s / (s * s + inv)).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcCorrected {
    /// raw / NC; NaN where NC = 0.
    pub values: Vec<f64>,
    pub median: f64,
    pub excluded: usize,
    pub exceeds_one: bool,
}

/// Divides per-neuron R² by the ceiling. Corrected values above 1 are kept
/// as-is and flagged.
pub fn nc_corrected_r2(raw_r2: &[f64], ceiling: &NoiseCeiling) -> Result<NcCorrected> {
    if raw_r2.len() != ceiling.values.len() {
        return Err(IatcError::dims(format!(
            "{} scores but {} ceiling entries",
            raw_r2.len(),
            ceiling.values.len()
        )));
    }
    let values: Vec<f64> = raw_r2
        .iter()
        .zip(&ceiling.values)
        .map(|(r, nc)| if *nc > 0.0 { r / nc } else { f64::NAN })
        .collect();
    Ok(NcCorrected {
        median: nan_median(&values),
        excluded: ceiling.values.iter().filter(|nc| !(**nc > 0.0)).count(),
        exceeds_one: values.iter().any(|v| *v > 1.0),
        values,
    })
}
