//! Scoring of a single mapping direction under a chosen correction.

use std::borrow::Cow;

use nalgebra::DMatrix;

use super::{scorer_input, Correction, ExperimentConfig};
use crate::data::{split_stimuli, PopulationDataset, ResponseProfile, Split, TrialTensor};
use crate::error::{IatcError, Result};
use crate::metrics::{predictivity, PairScorer};
use crate::noise::{corrected_predictivity_bootstrap, nc_ceiling, nc_corrected_r2};
use crate::rng::derive_seed;
use crate::stats::{nan_median, pearson_columns};
use crate::transforms::MappingMethod;

/// What a direction's number means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ScoreMode {
    /// Median test R².
    R2,
    /// Median of test R² divided by the target's noise ceiling.
    R2OverCeiling,
    /// Median test Pearson correlation.
    Pearson,
    /// Split-half bootstrap corrected correlation.
    Bootstrap,
}

impl ScoreMode {
    pub(crate) fn corrected(c: Correction) -> Self {
        match c {
            Correction::None => ScoreMode::R2,
            Correction::Nc => ScoreMode::R2OverCeiling,
            Correction::Bootstrap => ScoreMode::Bootstrap,
        }
    }

    /// Same units as `corrected(c)` but with a ceiling of one.
    pub(crate) fn uncorrected(c: Correction) -> Self {
        match c {
            Correction::Bootstrap => ScoreMode::Pearson,
            _ => ScoreMode::R2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DirectionScore {
    pub score: f64,
    /// Uncorrected counterpart of `score`.
    pub raw: f64,
    /// Per-neuron values `score` is the median of; empty for RSA.
    pub per_neuron: Vec<f64>,
    pub excluded_neurons: Option<usize>,
}

/// Everything a cell needs besides the two profiles.
pub(crate) struct CellContext<'a> {
    pub cfg: &'a ExperimentConfig,
    pub split: Split,
    /// Factor post-NL responses were divided by at storage time.
    pub scale: Option<f64>,
    pub n_trials: Option<usize>,
}

impl<'a> CellContext<'a> {
    pub(crate) fn new(cfg: &'a ExperimentConfig, ds: &PopulationDataset) -> Result<Self> {
        let split = split_stimuli(ds.n_stimuli(), &cfg.effective_split())?;
        Ok(CellContext {
            cfg,
            split,
            scale: super::stored_scale(ds),
            n_trials: ds.metadata.get("trials").and_then(|v| v.as_u64()).map(|n| n as usize),
        })
    }

    pub(crate) fn score(
        &self,
        scorer: &PairScorer,
        source: &ResponseProfile,
        target: &ResponseProfile,
        mode: ScoreMode,
        seed: u64,
    ) -> Result<DirectionScore> {
        let method = match scorer {
            PairScorer::Rsa { .. } => {
                let s = scorer.score(source.matrix.values(), target.matrix.values(), &self.split)?;
                return Ok(DirectionScore {
                    score: s,
                    raw: s,
                    per_neuron: Vec::new(),
                    excluded_neurons: None,
                });
            }
            PairScorer::Mapping(m) => m.with_seed(derive_seed(seed, "method")),
        };
        let x = scorer_input(source, scorer, self.scale);
        let y = scorer_input(target, scorer, self.scale);
        match mode {
            ScoreMode::R2 => {
                let p = predictivity(&x, &y, &method, &self.split)?;
                Ok(DirectionScore {
                    score: p.median_r2,
                    raw: p.median_r2,
                    per_neuron: p.per_neuron_r2,
                    excluded_neurons: None,
                })
            }
            ScoreMode::R2OverCeiling => {
                let p = predictivity(&x, &y, &method, &self.split)?;
                let ncsnr = target.ncsnr.as_ref().ok_or_else(|| {
                    IatcError::InvalidData(format!("{} has no ncsnr for noise-ceiling correction", target.key()))
                })?;
                let n = target
                    .trials
                    .as_ref()
                    .map(TrialTensor::trial_count)
                    .or(self.n_trials)
                    .ok_or_else(|| IatcError::InvalidData(format!("trial count of {} is unknown", target.key())))?;
                let corrected = nc_corrected_r2(&p.per_neuron_r2, &nc_ceiling(ncsnr, n)?)?;
                Ok(DirectionScore {
                    score: corrected.median,
                    raw: p.median_r2,
                    excluded_neurons: Some(corrected.excluded),
                    per_neuron: corrected.values,
                })
            }
            ScoreMode::Pearson => {
                let per_neuron = test_correlations(&x, &y, &method, &self.split)?;
                let score = nan_median(&per_neuron);
                Ok(DirectionScore {
                    score,
                    raw: score,
                    per_neuron,
                    excluded_neurons: None,
                })
            }
            ScoreMode::Bootstrap => {
                let trials = target.trials.as_ref().ok_or_else(|| {
                    IatcError::InvalidData(format!("{} has no trials for bootstrap correction", target.key()))
                })?;
                // trials follow the target onto the rate scale
                let trials = match (&y, self.scale) {
                    (Cow::Owned(_), Some(c)) => Cow::Owned(rescale_trials(trials, c)?),
                    _ => Cow::Borrowed(trials),
                };
                let opts = self.cfg.bootstrap_options(derive_seed(seed, "bootstrap"));
                let c = corrected_predictivity_bootstrap(&x, &trials, &method, &opts)?;
                Ok(DirectionScore {
                    score: c.corrected,
                    raw: c.raw,
                    excluded_neurons: Some(c.excluded_neurons),
                    per_neuron: c.per_neuron_corrected,
                })
            }
        }
    }
}

fn rescale_trials(t: &TrialTensor, c: f64) -> Result<TrialTensor> {
    TrialTensor::new(t.trials().iter().map(|m| m * c).collect(), t.is_counts())
}

fn test_correlations(x: &DMatrix<f64>, y: &DMatrix<f64>, method: &MappingMethod, split: &Split) -> Result<Vec<f64>> {
    let map = method.fit(&x.select_rows(&split.train), &y.select_rows(&split.train))?;
    let pred = map.predict(&x.select_rows(&split.test))?;
    Ok(pearson_columns(&pred, &y.select_rows(&split.test)))
}
