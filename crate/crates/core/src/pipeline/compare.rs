use std::collections::BTreeMap;

use rayon::prelude::*;

use super::cell::{CellContext, DirectionScore, ScoreMode};
use super::{
    build_pool, finite, median_ci, select_profiles, stored_scale, ComparisonBlock, ComparisonCell,
    EvaluationReport, ExperimentConfig, LayerScore, Provenance, ReportKind, ScoreRow, SeparationRow,
    TOOLKIT_VERSION,
};
use crate::data::{PopulationDataset, ResponseProfile};
use crate::error::{IatcError, Result};
use crate::metrics::model_separation;
use crate::rng::derive_seed;
use crate::stats::mean;

pub const VIEWS: [&str; 3] = ["model_to_brain", "brain_to_model", "average"];

fn label(p: &ResponseProfile) -> String {
    format!("{}/{}", p.subject_id, p.area_id)
}

/// Bidirectional comparison of candidate models with a population. Each
/// model profile is one layer (`subject_id` = model name, `area_id` =
/// layer name). Model → brain scores carry the configured noise correction;
/// brain → model scores use a ceiling of one.
pub fn run_model_comparison(
    cfg: &ExperimentConfig,
    models: &PopulationDataset,
    population: &PopulationDataset,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    if models.stimulus_ids() != population.stimulus_ids() {
        return Err(IatcError::dims(format!(
            "models and population disagree on stimuli ({} vs {})",
            models.n_stimuli(),
            population.n_stimuli()
        )));
    }
    let scorers = cfg.scorers(stored_scale(population))?;
    let (stage, brains) = select_profiles(population, cfg.stage, cfg.areas.as_deref())?;
    let mut layers: Vec<&ResponseProfile> = models.profiles().iter().collect();
    layers.sort_by(|a, b| {
        (&a.subject_id, a.hierarchy_level, &a.area_id)
            .partial_cmp(&(&b.subject_id, b.hierarchy_level, &b.area_id))
            .expect("finite hierarchy levels")
    });
    let ctx = CellContext::new(cfg, population)?;
    let forward = ScoreMode::corrected(cfg.correction);
    let backward = ScoreMode::uncorrected(cfg.correction);

    // (method, layer, brain, model_to_brain?)
    let (n_layers, n_brains) = (layers.len(), brains.len());
    let tasks: Vec<(usize, usize, usize, bool)> = (0..scorers.len())
        .flat_map(|m| {
            (0..n_layers).flat_map(move |l| (0..n_brains).flat_map(move |b| [(m, l, b, true), (m, l, b, false)]))
        })
        .collect();
    let names = |&(m, l, b, to_brain): &(usize, usize, usize, bool)| {
        let (src, tgt) = if to_brain { (layers[l], brains[b]) } else { (brains[b], layers[l]) };
        (scorers[m].0.clone(), label(src), label(tgt))
    };
    let run = |t: &(usize, usize, usize, bool)| -> Result<DirectionScore> {
        let (m, l, b, to_brain) = *t;
        // Keyed by layer name, not model name: every model sees the same
        // random streams, so identical models score identically.
        let dir = if to_brain { "m2b" } else { "b2m" };
        let key = format!("compare/{}/{dir}/{}/{}", scorers[m].0, layers[l].area_id, label(brains[b]));
        let seed = derive_seed(cfg.seed, &key);
        if to_brain {
            ctx.score(&scorers[m].1, layers[l], brains[b], forward, seed)
        } else {
            ctx.score(&scorers[m].1, brains[b], layers[l], backward, seed)
        }
    };
    let pool = build_pool(cfg.jobs)?;
    let outcomes: Vec<Result<DirectionScore>> = pool.install(|| tasks.par_iter().map(run).collect());

    let mut scores = Vec::with_capacity(tasks.len());
    let mut cells = Vec::new();
    for (i, (t, o)) in tasks.iter().zip(&outcomes).enumerate() {
        let (m, l, b, to_brain) = *t;
        let (method, source, target) = names(t);
        let mut row = ScoreRow {
            pair: format!("{}|{}", label(layers[l]), brains[b].subject_id),
            area: brains[b].area_id.clone(),
            direction: if to_brain { "model->brain" } else { "brain->model" }.to_string(),
            method,
            source,
            target,
            score: None,
            ci_low: None,
            ci_high: None,
            excluded_neurons: None,
            error: None,
        };
        match o {
            Ok(d) => {
                row.score = finite(d.score);
                let seed = derive_seed(cfg.seed, &format!("ci/{}/{}/{}", row.method, row.source, row.target));
                (row.ci_low, row.ci_high) = median_ci(&d.per_neuron, d.score, cfg.ci_resamples, seed);
                row.excluded_neurons = d.excluded_neurons;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        scores.push(row);
        if !to_brain {
            // the model -> brain task of the same cell comes just before
            let fwd = outcomes[i - 1].as_ref().ok();
            let bwd = o.as_ref().ok().and_then(|d| finite(d.score));
            cells.push(ComparisonCell {
                model: layers[l].subject_id.clone(),
                layer: layers[l].area_id.clone(),
                subject: brains[b].subject_id.clone(),
                area: brains[b].area_id.clone(),
                method: scorers[m].0.clone(),
                model_to_brain: fwd.and_then(|d| finite(d.score)),
                model_to_brain_raw: fwd.and_then(|d| finite(d.raw)),
                brain_to_model: bwd,
                average: match (fwd.and_then(|d| finite(d.score)), bwd) {
                    (Some(a), Some(b)) => Some(0.5 * (a + b)),
                    _ => None,
                },
            });
        }
    }

    let layer_scores = subject_averages(&cells);
    let model_separation = separations(&scorers.iter().map(|(l, _)| l.clone()).collect::<Vec<_>>(), &layer_scores);
    let failed_cells = outcomes.iter().filter(|o| o.is_err()).count();
    Ok(EvaluationReport {
        kind: ReportKind::ModelComparison,
        provenance: Provenance {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            split_seed: cfg.effective_split().seed,
            methods: scorers.iter().map(|(l, _)| l.clone()).collect(),
            stage: Some(stage),
            correction: cfg.correction,
            ci_resamples: cfg.ci_resamples,
            total_cells: outcomes.len(),
            failed_cells,
        },
        scores,
        area_summaries: Vec::new(),
        specificity: Vec::new(),
        comparison: Some(ComparisonBlock {
            cells,
            layer_scores,
            model_separation,
        }),
    })
}

/// Mean over subjects of every (model, layer, area, method) for each view.
fn subject_averages(cells: &[ComparisonCell]) -> Vec<LayerScore> {
    let mut groups: Vec<((String, String, String, String), Vec<&ComparisonCell>)> = Vec::new();
    for c in cells {
        let key = (c.model.clone(), c.layer.clone(), c.area.clone(), c.method.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(c),
            None => groups.push((key, vec![c])),
        }
    }
    let mut out = Vec::new();
    for ((model, layer, area, method), members) in groups {
        for view in VIEWS {
            let vals: Option<Vec<f64>> = members
                .iter()
                .map(|c| match view {
                    "model_to_brain" => c.model_to_brain,
                    "brain_to_model" => c.brain_to_model,
                    _ => c.average,
                })
                .collect();
            out.push(LayerScore {
                model: model.clone(),
                layer: layer.clone(),
                area: area.clone(),
                method: method.clone(),
                view: view.to_string(),
                score: vals.map(|v| mean(&v)).and_then(finite),
            });
        }
    }
    out
}

fn separations(methods: &[String], layer_scores: &[LayerScore]) -> Vec<SeparationRow> {
    let mut rows = Vec::new();
    for method in methods {
        for view in VIEWS {
            // model -> its (layer, area) scores in hierarchy order
            let mut per_model: BTreeMap<&str, Vec<Option<f64>>> = BTreeMap::new();
            let mut order: Vec<&str> = Vec::new();
            for s in layer_scores.iter().filter(|s| &s.method == method && s.view == view) {
                if !per_model.contains_key(s.model.as_str()) {
                    order.push(&s.model);
                }
                per_model.entry(&s.model).or_default().push(s.score);
            }
            let collected: Option<Vec<Vec<f64>>> = order
                .iter()
                .map(|m| per_model[m].iter().copied().collect::<Option<Vec<f64>>>())
                .collect();
            let (separation, error) = match collected {
                None => (None, Some("a model has failed cells".to_string())),
                Some(scores) => match model_separation(&scores) {
                    Ok(v) => (finite(v), None),
                    Err(e) => (None, Some(e.to_string())),
                },
            };
            rows.push(SeparationRow {
                method: method.clone(),
                view: view.to_string(),
                separation,
                error,
            });
        }
    }
    rows
}
