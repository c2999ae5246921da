//! Response matrices, labeled profiles, datasets and stimulus splitting.

mod io;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{IatcError, Result};

pub use io::{load_dataset, save_dataset, Manifest, ManifestProfile};
pub use split::{kfold, split_stimuli, Split, SplitSpec};

/// Stimuli × neurons responses. Rows are always the sample axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMatrix {
    values: DMatrix<f64>,
    stimulus_ids: Vec<String>,
    neuron_ids: Vec<String>,
}

fn check_unique(ids: &[String], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(IatcError::InvalidData(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

pub fn default_stimulus_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("stim{i}")).collect()
}

pub fn default_neuron_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

impl ResponseMatrix {
    pub fn new(
        values: DMatrix<f64>,
        stimulus_ids: Vec<String>,
        neuron_ids: Vec<String>,
    ) -> Result<Self> {
        let (s, n) = values.shape();
        if s < 2 || n < 1 {
            return Err(IatcError::dims(format!(
                "response matrix needs at least 2 stimuli and 1 neuron, got {s}x{n}"
            )));
        }
        if stimulus_ids.len() != s || neuron_ids.len() != n {
            return Err(IatcError::dims(format!(
                "{s}x{n} values with {} stimulus ids and {} neuron ids",
                stimulus_ids.len(),
                neuron_ids.len()
            )));
        }
        check_unique(&stimulus_ids, "stimulus")?;
        check_unique(&neuron_ids, "neuron")?;
        for j in 0..n {
            for i in 0..s {
                if !values[(i, j)].is_finite() {
                    return Err(IatcError::NonFinite {
                        file: "<memory>".into(),
                        row: i + 1,
                        column: j + 1,
                    });
                }
            }
        }
        Ok(ResponseMatrix {
            values,
            stimulus_ids,
            neuron_ids,
        })
    }

    /// Wraps raw values with generated stimulus and neuron ids.
    pub fn from_values(values: DMatrix<f64>) -> Result<Self> {
        let (s, n) = values.shape();
        Self::new(values, default_stimulus_ids(s), default_neuron_ids(n))
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    pub fn neuron_ids(&self) -> &[String] {
        &self.neuron_ids
    }

    pub fn n_stimuli(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_neurons(&self) -> usize {
        self.values.ncols()
    }

    /// Rows at `indices`, in the given order.
    pub fn rows(&self, indices: &[usize]) -> DMatrix<f64> {
        self.values.select_rows(indices)
    }

    /// Scales every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        ResponseMatrix {
            values: &self.values * factor,
            ..self.clone()
        }
    }

    /// Appends the columns of `other` (same stimuli) after this matrix's.
    pub fn hconcat(&self, other: &ResponseMatrix) -> Result<Self> {
        if other.stimulus_ids != self.stimulus_ids {
            return Err(IatcError::dims("concatenated matrices must share stimuli"));
        }
        let s = self.n_stimuli();
        let n = self.n_neurons() + other.n_neurons();
        let mut values = DMatrix::zeros(s, n);
        values.columns_mut(0, self.n_neurons()).copy_from(&self.values);
        values
            .columns_mut(self.n_neurons(), other.n_neurons())
            .copy_from(&other.values);
        let mut ids = self.neuron_ids.clone();
        ids.extend(other.neuron_ids.iter().cloned());
        Self::new(values, self.stimulus_ids.clone(), ids)
    }
}

/// Per-trial responses; `trials[t]` is the S×N matrix of trial `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTensor {
    trials: Vec<DMatrix<f64>>,
    counts: bool,
}

impl TrialTensor {
    /// `counts` tags the tensor as spike counts / rate samples, which must be
    /// nonnegative.
    pub fn new(trials: Vec<DMatrix<f64>>, counts: bool) -> Result<Self> {
        let first = trials
            .first()
            .ok_or_else(|| IatcError::InvalidData("trial tensor needs at least one trial".into()))?;
        let shape = first.shape();
        for (t, m) in trials.iter().enumerate() {
            if m.shape() != shape {
                return Err(IatcError::dims(format!(
                    "trial {t} has shape {:?}, expected {shape:?}",
                    m.shape()
                )));
            }
            if let Some(k) = m.iter().position(|v| !v.is_finite()) {
                return Err(IatcError::NonFinite {
                    file: format!("<trial {t}>"),
                    row: k % shape.0 + 1,
                    column: k / shape.0 + 1,
                });
            }
            if counts && m.iter().any(|v| *v < 0.0) {
                return Err(IatcError::InvalidData(format!(
                    "negative count in trial {t}"
                )));
            }
        }
        Ok(TrialTensor { trials, counts })
    }

    pub fn trial_count(&self) -> usize {
        self.trials.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.trials[0].shape()
    }

    pub fn is_counts(&self) -> bool {
        self.counts
    }

    pub fn trials(&self) -> &[DMatrix<f64>] {
        &self.trials
    }

    /// Mean over the trials at `indices`.
    pub fn average_of(&self, indices: &[usize]) -> DMatrix<f64> {
        let (s, n) = self.shape();
        let mut acc = DMatrix::zeros(s, n);
        for &t in indices {
            acc += &self.trials[t];
        }
        acc / indices.len() as f64
    }

    /// Same trials in a different order.
    pub fn permuted(&self, order: &[usize]) -> Self {
        TrialTensor {
            trials: order.iter().map(|&t| self.trials[t].clone()).collect(),
            counts: self.counts,
        }
    }
}

/// Arithmetic mean over trials, wrapped as a response matrix with the given
/// ids.
pub fn trial_average(
    t: &TrialTensor,
    stimulus_ids: Vec<String>,
    neuron_ids: Vec<String>,
) -> Result<ResponseMatrix> {
    let all: Vec<usize> = (0..t.trial_count()).collect();
    ResponseMatrix::new(t.average_of(&all), stimulus_ids, neuron_ids)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreNl,
    PostNl,
    #[default]
    Unspecified,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::PreNl => "pre_nl",
            Stage::PostNl => "post_nl",
            Stage::Unspecified => "unspecified",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        match s {
            "pre_nl" => Ok(Stage::PreNl),
            "post_nl" => Ok(Stage::PostNl),
            "unspecified" => Ok(Stage::Unspecified),
            other => Err(IatcError::InvalidData(format!("unknown stage {other:?}"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identity of a profile inside a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ProfileKey {
    pub subject: String,
    pub area: String,
    pub stage: Stage,
}

impl fmt::Display for ProfileKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.subject, self.area, self.stage)
    }
}

/// A response matrix labeled with subject, area and hierarchy level.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseProfile {
    pub matrix: ResponseMatrix,
    pub subject_id: String,
    pub area_id: String,
    pub hierarchy_level: f64,
    pub stage: Stage,
    pub trials: Option<TrialTensor>,
    pub ncsnr: Option<Vec<f64>>,
}

impl ResponseProfile {
    pub fn new(
        matrix: ResponseMatrix,
        subject_id: impl Into<String>,
        area_id: impl Into<String>,
        hierarchy_level: f64,
        stage: Stage,
    ) -> Self {
        ResponseProfile {
            matrix,
            subject_id: subject_id.into(),
            area_id: area_id.into(),
            hierarchy_level,
            stage,
            trials: None,
            ncsnr: None,
        }
    }

    pub fn key(&self) -> ProfileKey {
        ProfileKey {
            subject: self.subject_id.clone(),
            area: self.area_id.clone(),
            stage: self.stage,
        }
    }

    /// Attaches per-trial responses; their average must match the matrix
    /// shape.
    pub fn with_trials(mut self, trials: TrialTensor) -> Result<Self> {
        if trials.shape() != self.matrix.values().shape() {
            return Err(IatcError::dims(format!(
                "trials of shape {:?} for profile {}",
                trials.shape(),
                self.key()
            )));
        }
        self.trials = Some(trials);
        Ok(self)
    }

    pub fn with_ncsnr(mut self, ncsnr: Vec<f64>) -> Result<Self> {
        if ncsnr.len() != self.matrix.n_neurons() {
            return Err(IatcError::dims(format!(
                "{} ncsnr values for {} neurons in {}",
                ncsnr.len(),
                self.matrix.n_neurons(),
                self.key()
            )));
        }
        if ncsnr.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(IatcError::InvalidData(format!(
                "ncsnr must be finite and nonnegative in {}",
                self.key()
            )));
        }
        self.ncsnr = Some(ncsnr);
        Ok(self)
    }
}

/// Concatenates the neuron columns of several profiles of one area into a
/// synthetic pooled subject. Neuron ids are prefixed with their subject.
pub fn pool_profiles(profiles: &[&ResponseProfile], subject_id: &str) -> Result<ResponseProfile> {
    let first = profiles
        .first()
        .ok_or_else(|| IatcError::InvalidData("nothing to pool".into()))?;
    let relabel = |p: &ResponseProfile| -> Result<ResponseMatrix> {
        let ids = p
            .matrix
            .neuron_ids()
            .iter()
            .map(|n| format!("{}/{n}", p.subject_id))
            .collect();
        ResponseMatrix::new(
            p.matrix.values().clone(),
            p.matrix.stimulus_ids().to_vec(),
            ids,
        )
    };
    let mut pooled = relabel(first)?;
    for p in &profiles[1..] {
        pooled = pooled.hconcat(&relabel(p)?)?;
    }
    Ok(ResponseProfile::new(
        pooled,
        subject_id,
        first.area_id.clone(),
        first.hierarchy_level,
        first.stage,
    ))
}

/// A validated collection of profiles sharing one stimulus ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDataset {
    profiles: Vec<ResponseProfile>,
    stimulus_ids: Vec<String>,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl PopulationDataset {
    pub fn new(
        profiles: Vec<ResponseProfile>,
        metadata: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self> {
        let first = profiles
            .first()
            .ok_or_else(|| IatcError::InvalidData("dataset has no profiles".into()))?;
        let stimulus_ids = first.matrix.stimulus_ids().to_vec();
        let mut keys = BTreeSet::new();
        for p in &profiles {
            if p.matrix.stimulus_ids() != stimulus_ids.as_slice() {
                return Err(IatcError::DimensionMismatch {
                    context: Some(p.key().to_string()),
                    message: "profiles must share identical stimulus ids in identical order".into(),
                });
            }
            if !keys.insert(p.key()) {
                return Err(IatcError::DuplicateProfile {
                    subject: p.subject_id.clone(),
                    area: p.area_id.clone(),
                    stage: p.stage.to_string(),
                });
            }
        }
        Ok(PopulationDataset {
            profiles,
            stimulus_ids,
            metadata,
        })
    }

    pub fn profiles(&self) -> &[ResponseProfile] {
        &self.profiles
    }

    pub fn stimulus_ids(&self) -> &[String] {
        &self.stimulus_ids
    }

    pub fn n_stimuli(&self) -> usize {
        self.stimulus_ids.len()
    }

    pub fn get(&self, subject: &str, area: &str, stage: Stage) -> Option<&ResponseProfile> {
        self.profiles
            .iter()
            .find(|p| p.subject_id == subject && p.area_id == area && p.stage == stage)
    }

    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.profiles.iter().map(|p| p.subject_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn areas(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.profiles.iter().map(|p| p.area_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    }

    pub fn stages(&self) -> Vec<Stage> {
        let set: BTreeSet<Stage> = self.profiles.iter().map(|p| p.stage).collect();
        set.into_iter().collect()
    }

    /// Profiles of one stage, in dataset order.
    pub fn with_stage(&self, stage: Stage) -> Vec<&ResponseProfile> {
        self.profiles.iter().filter(|p| p.stage == stage).collect()
    }

    pub fn metadata_f64(&self, key: &str) -> Option<f64> {
        self.metadata.get(key).and_then(|v| v.as_f64())
    }
}
