//! Config-driven experiment runs: cross-subject population evaluation,
//! model-versus-population comparison, and report emission.

mod cell;
mod compare;
mod config;
mod evaluate;
mod report;

use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{PopulationDataset, ResponseProfile, Stage};
use crate::error::{IatcError, Result};
use crate::metrics::{DissimilarityMatrix, MdsResult, PairScorer, SpecificityReport};
use crate::rng::rng_from_seed;
use crate::simulator::SCALE_KEY;
use crate::stats::{mean, nan_median, quantile_sorted};
use crate::transforms::MappingMethod;

pub use compare::run_model_comparison;
pub use config::{BootstrapSettings, Correction, ExperimentConfig, MethodEntry, MetricToggles};
pub use evaluate::run_population_eval;
pub use report::{emit_report, read_report, render_csvs, MDS_CSV, REPORT_JSON, SCORES_CSV};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    PopulationEval,
    ModelComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub toolkit_version: String,
    /// SHA-256 of the canonical JSON of the config, without runtime-only
    /// fields (dataset and output paths, worker count).
    pub config_hash: String,
    pub master_seed: u64,
    pub split_seed: u64,
    pub methods: Vec<String>,
    pub stage: Option<Stage>,
    pub correction: Correction,
    pub ci_resamples: usize,
    pub total_cells: usize,
    pub failed_cells: usize,
}

/// One scored mapping direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub pair: String,
    pub area: String,
    pub method: String,
    pub direction: String,
    pub source: String,
    pub target: String,
    pub score: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_neurons: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean bidirectional score of one area under one method, with a
/// bootstrap CI over subject pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaSummary {
    pub area: String,
    pub method: String,
    pub n_pairs: usize,
    pub score: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpecificity {
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissimilarity: Option<DissimilarityMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specificity: Option<SpecificityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy_correlation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mds: Option<MdsResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

/// Model-versus-brain scores of one (model layer, subject, area, method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub model: String,
    pub layer: String,
    pub subject: String,
    pub area: String,
    pub method: String,
    pub model_to_brain: Option<f64>,
    /// Model → brain before noise correction.
    pub model_to_brain_raw: Option<f64>,
    pub brain_to_model: Option<f64>,
    pub average: Option<f64>,
}

/// Subject-averaged score of one model layer for one area, method and view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerScore {
    pub model: String,
    pub layer: String,
    pub area: String,
    pub method: String,
    pub view: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub method: String,
    pub view: String,
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonBlock {
    pub cells: Vec<ComparisonCell>,
    pub layer_scores: Vec<LayerScore>,
    pub model_separation: Vec<SeparationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub kind: ReportKind,
    pub provenance: Provenance,
    pub scores: Vec<ScoreRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub area_summaries: Vec<AreaSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub specificity: Vec<MethodSpecificity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonBlock>,
}

impl EvaluationReport {
    pub fn failure_fraction(&self) -> f64 {
        let p = &self.provenance;
        if p.total_cells == 0 {
            0.0
        } else {
            p.failed_cells as f64 / p.total_cells as f64
        }
    }

    pub fn area_summary(&self, method: &str, area: &str) -> Option<&AreaSummary> {
        self.area_summaries.iter().find(|s| s.method == method && s.area == area)
    }

    pub fn specificity_of(&self, method: &str) -> Option<&MethodSpecificity> {
        self.specificity.iter().find(|s| s.method == method)
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Factor the dataset's post-NL responses were divided by, if recorded.
pub fn stored_scale(ds: &PopulationDataset) -> Option<f64> {
    let flagged = ds
        .metadata
        .get("post_nl_divided_by_scale")
        .and_then(|v| v.as_bool())
        .unwrap_or(false);
    if flagged {
        ds.metadata_f64(SCALE_KEY)
    } else {
        None
    }
}

/// Responses as a scorer should see them: Exact Zippering works on the
/// original rate scale, so divided-down post-NL responses are scaled back.
/// Profiles of any other stage (model activations included) pass through.
pub fn scorer_input<'a>(
    p: &'a ResponseProfile,
    scorer: &PairScorer,
    scale: Option<f64>,
) -> Cow<'a, DMatrix<f64>> {
    match (scorer, scale) {
        (PairScorer::Mapping(MappingMethod::ExactZippering { .. }), Some(c)) if p.stage == Stage::PostNl => {
            Cow::Owned(p.matrix.values() * c)
        }
        _ => Cow::Borrowed(p.matrix.values()),
    }
}

/// Percentile bootstrap of `stat` over resamples of `values`, widened so it
/// always contains the point estimate.
pub(crate) fn bootstrap_ci(
    values: &[f64],
    point: f64,
    resamples: usize,
    seed: u64,
    stat: impl Fn(&[f64]) -> f64,
) -> (Option<f64>, Option<f64>) {
    let usable: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if !point.is_finite() {
        return (None, None);
    }
    if usable.len() < 2 || resamples == 0 {
        return (Some(point), Some(point));
    }
    let mut rng = rng_from_seed(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let sample: Vec<f64> = (0..usable.len())
                .map(|_| usable[rng.random_range(0..usable.len())])
                .collect();
            stat(&sample)
        })
        .filter(|v| v.is_finite())
        .collect();
    if stats.is_empty() {
        return (Some(point), Some(point));
    }
    stats.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&stats, 0.025).min(point);
    let hi = quantile_sorted(&stats, 0.975).max(point);
    (Some(lo), Some(hi))
}

pub(crate) fn median_ci(per_neuron: &[f64], point: f64, resamples: usize, seed: u64) -> (Option<f64>, Option<f64>) {
    bootstrap_ci(per_neuron, point, resamples, seed, nan_median)
}

pub(crate) fn mean_ci(values: &[f64], point: f64, resamples: usize, seed: u64) -> (Option<f64>, Option<f64>) {
    bootstrap_ci(values, point, resamples, seed, mean)
}

/// Profiles of the requested stage (or the natural default) restricted to
/// the configured areas, in canonical (area, subject) order.
pub(crate) fn select_profiles<'a>(
    ds: &'a PopulationDataset,
    stage: Option<Stage>,
    areas: Option<&[String]>,
) -> Result<(Stage, Vec<&'a ResponseProfile>)> {
    let stages = ds.stages();
    let stage = match stage {
        Some(s) => s,
        None if stages.len() == 1 => stages[0],
        None if stages.contains(&Stage::PostNl) => Stage::PostNl,
        None => {
            return Err(IatcError::Config(format!(
                "dataset holds several stages {stages:?}; choose one with `stage`"
            )))
        }
    };
    let mut chosen = ds.with_stage(stage);
    if chosen.is_empty() {
        return Err(IatcError::Config(format!("dataset has no {stage} profiles")));
    }
    if let Some(areas) = areas {
        let known = ds.areas();
        if let Some(missing) = areas.iter().find(|a| !known.contains(a)) {
            return Err(IatcError::Config(format!("area {missing:?} is not in the dataset")));
        }
        chosen.retain(|p| areas.contains(&p.area_id));
    }
    chosen.sort_by(|a, b| (&a.area_id, &a.subject_id).cmp(&(&b.area_id, &b.subject_id)));
    Ok((stage, chosen))
}

pub(crate) fn build_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| IatcError::Config(format!("cannot start worker pool: {e}")))
}
