use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{IatcError, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    /// Folds used for cross-validation inside the training set.
    pub fold_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.8,
            seed: 0,
            fold_count: 5,
        }
    }
}

/// Train/test partition of stimulus indices. Both halves are sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_stimuli(n_stimuli: usize, spec: &SplitSpec) -> Result<Split> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(IatcError::Config(format!(
            "train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    let n_train = (n_stimuli as f64 * spec.train_fraction + 1e-9).floor() as usize;
    if n_train < 2 || n_stimuli.saturating_sub(n_train) < 2 {
        return Err(IatcError::TooFewStimuli(format!(
            "{n_stimuli} stimuli at train fraction {} leave {n_train} train / {} test (need >= 2 each)",
            spec.train_fraction,
            n_stimuli.saturating_sub(n_train)
        )));
    }
    let mut order: Vec<usize> = (0..n_stimuli).collect();
    order.shuffle(&mut rng_from_seed(spec.seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// K-fold partition of `0..n` into (fit, held-out) position lists.
pub fn kfold(n: usize, folds: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds < 2 {
        return Err(IatcError::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds * 2 {
        return Err(IatcError::TooFewStimuli(format!(
            "{n} training stimuli cannot be split into {folds} folds of at least 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let lo = f * n / folds;
        let hi = (f + 1) * n / folds;
        let mut held: Vec<usize> = order[lo..hi].to_vec();
        let mut fit: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        held.sort_unstable();
        fit.sort_unstable();
        out.push((fit, held));
    }
    Ok(out)
}
