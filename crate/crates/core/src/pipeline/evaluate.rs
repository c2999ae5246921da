use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::cell::{CellContext, DirectionScore, ScoreMode};
use super::{
    build_pool, finite, mean_ci, median_ci, select_profiles, stored_scale, AreaSummary, EvaluationReport,
    ExperimentConfig, MethodSpecificity, Provenance, ReportKind, ScoreRow, TOOLKIT_VERSION,
};
use crate::data::{pool_profiles, PopulationDataset, ResponseProfile};
use crate::error::{IatcError, Result};
use crate::metrics::{
    hierarchy_correlation, mds_embed, silhouette_specificity, DissimilarityMatrix, ProfileLabel,
};
use crate::rng::derive_seed;
use crate::stats::mean;

/// One source → target fit. `pooled` marks a pooled-source cell.
struct Task {
    method: usize,
    source: usize,
    target: usize,
    pooled: bool,
}

fn label(p: &ResponseProfile) -> String {
    format!("{}/{}", p.subject_id, p.area_id)
}

/// Cross-subject evaluation of every configured method: within-area pair
/// scores in both directions, per-area summaries, and (when enabled) the
/// all-pairs dissimilarity matrix with its specificity, hierarchy and MDS
/// readouts. Failed fits are recorded per cell.
pub fn run_population_eval(cfg: &ExperimentConfig, ds: &PopulationDataset) -> Result<EvaluationReport> {
    cfg.validate()?;
    let scorers = cfg.scorers(stored_scale(ds))?;
    let (stage, profiles) = select_profiles(ds, cfg.stage, cfg.areas.as_deref())?;
    let subjects: BTreeSet<&str> = profiles.iter().map(|p| p.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(IatcError::InvalidData(
            "pairwise evaluation needs at least 2 subjects".into(),
        ));
    }
    let ctx = CellContext::new(cfg, ds)?;
    let mode = ScoreMode::corrected(cfg.correction);

    // Pooled sources: one synthetic profile per (area, held-out subject).
    let mut pooled: Vec<ResponseProfile> = Vec::new();
    let mut pooled_for: Vec<usize> = Vec::new();
    if cfg.pool_sources {
        for (t, target) in profiles.iter().enumerate() {
            let others: Vec<&ResponseProfile> = profiles
                .iter()
                .filter(|p| p.area_id == target.area_id && p.subject_id != target.subject_id)
                .copied()
                .collect();
            if others.is_empty() {
                continue;
            }
            pooled.push(pool_profiles(&others, &format!("pooled-{}", target.subject_id))?);
            pooled_for.push(t);
        }
    }
    let profile = |idx: usize, is_pooled: bool| -> &ResponseProfile {
        if is_pooled {
            &pooled[idx]
        } else {
            profiles[idx]
        }
    };

    let k = profiles.len();
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let want_pair = |i: usize, j: usize| {
        let same_area = profiles[i].area_id == profiles[j].area_id;
        cfg.metrics.any() || (same_area && !cfg.pool_sources)
    };
    let mut tasks = Vec::new();
    for m in 0..scorers.len() {
        for &(i, j) in &pairs {
            if want_pair(i, j) {
                tasks.push(Task { method: m, source: i, target: j, pooled: false });
                tasks.push(Task { method: m, source: j, target: i, pooled: false });
            }
        }
        for (q, _) in pooled_for.iter().enumerate() {
            tasks.push(Task { method: m, source: q, target: q, pooled: true });
        }
    }

    let seed_of = |t: &Task| {
        let (src, tgt) = if t.pooled {
            (label(&pooled[t.source]), label(profiles[pooled_for[t.target]]))
        } else {
            (label(profiles[t.source]), label(profiles[t.target]))
        };
        derive_seed(cfg.seed, &format!("cell/{}/{src}/{tgt}", scorers[t.method].0))
    };
    let run = |t: &Task| -> Result<DirectionScore> {
        let (src, tgt) = if t.pooled {
            (profile(t.source, true), profiles[pooled_for[t.target]])
        } else {
            (profile(t.source, false), profiles[t.target])
        };
        ctx.score(&scorers[t.method].1, src, tgt, mode, seed_of(t))
    };
    let pool = build_pool(cfg.jobs)?;
    let outcomes: Vec<Result<DirectionScore>> = pool.install(|| tasks.par_iter().map(run).collect());

    let total_cells = outcomes.len();
    let failed_cells = outcomes.iter().filter(|o| o.is_err()).count();
    let index: BTreeMap<(usize, usize, usize), usize> = tasks
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.pooled)
        .map(|(i, t)| ((t.method, t.source, t.target), i))
        .collect();
    let lookup = |m: usize, s: usize, t: usize| index.get(&(m, s, t)).map(|&i| &outcomes[i]);

    let row = |m: usize, t: &Task, o: &Result<DirectionScore>| -> ScoreRow {
        let (src, tgt) = if t.pooled {
            (&pooled[t.source], profiles[pooled_for[t.target]])
        } else {
            (profiles[t.source], profiles[t.target])
        };
        let pair = if t.pooled {
            format!("{}|{}", src.subject_id, tgt.subject_id)
        } else {
            let mut names = [src.subject_id.as_str(), tgt.subject_id.as_str()];
            names.sort_unstable();
            names.join("|")
        };
        let mut r = ScoreRow {
            pair,
            area: tgt.area_id.clone(),
            method: scorers[m].0.clone(),
            direction: format!("{}->{}", src.subject_id, tgt.subject_id),
            source: label(src),
            target: label(tgt),
            score: None,
            ci_low: None,
            ci_high: None,
            excluded_neurons: None,
            error: None,
        };
        match o {
            Ok(d) => {
                r.score = finite(d.score);
                let ci_seed = derive_seed(cfg.seed, &format!("ci/{}/{}/{}", r.method, r.source, r.target));
                (r.ci_low, r.ci_high) = median_ci(&d.per_neuron, d.score, cfg.ci_resamples, ci_seed);
                r.excluded_neurons = d.excluded_neurons;
            }
            Err(e) => r.error = Some(e.to_string()),
        }
        r
    };

    let areas: Vec<String> = {
        let set: BTreeSet<&str> = profiles.iter().map(|p| p.area_id.as_str()).collect();
        set.into_iter().map(String::from).collect()
    };
    let mut scores = Vec::new();
    let mut area_summaries = Vec::new();
    for (m, (method_label, _)) in scorers.iter().enumerate() {
        for area in &areas {
            let mut pair_means = Vec::new();
            if cfg.pool_sources {
                for (ti, t) in tasks.iter().enumerate() {
                    if t.method == m && t.pooled && &profiles[pooled_for[t.target]].area_id == area {
                        let r = row(m, t, &outcomes[ti]);
                        if let Some(s) = r.score {
                            pair_means.push(s);
                        }
                        scores.push(r);
                    }
                }
            } else {
                for &(i, j) in pairs.iter().filter(|(i, _)| &profiles[*i].area_id == area) {
                    if profiles[j].area_id != *area {
                        continue;
                    }
                    let mut both = Vec::new();
                    for (s, t) in [(i, j), (j, i)] {
                        let task = Task { method: m, source: s, target: t, pooled: false };
                        let o = lookup(m, s, t).expect("within-area cell scheduled");
                        let r = row(m, &task, o);
                        both.push(r.score);
                        scores.push(r);
                    }
                    if let [Some(a), Some(b)] = both[..] {
                        pair_means.push(0.5 * (a + b));
                    }
                }
            }
            let point = if pair_means.is_empty() { f64::NAN } else { mean(&pair_means) };
            let ci_seed = derive_seed(cfg.seed, &format!("ci/area/{method_label}/{area}"));
            let (ci_low, ci_high) = mean_ci(&pair_means, point, cfg.ci_resamples, ci_seed);
            area_summaries.push(AreaSummary {
                area: area.clone(),
                method: method_label.clone(),
                n_pairs: pair_means.len(),
                score: finite(point),
                ci_low,
                ci_high,
            });
        }
    }

    let mut specificity = Vec::new();
    if cfg.metrics.any() {
        for (m, (method_label, _)) in scorers.iter().enumerate() {
            specificity.push(method_specificity(cfg, method_label, &profiles, &pairs, |s, t| {
                lookup(m, s, t).and_then(|o| o.as_ref().ok()).map(|d| d.score)
            }));
        }
    }

    Ok(EvaluationReport {
        kind: ReportKind::PopulationEval,
        provenance: Provenance {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash: cfg.hash(),
            master_seed: cfg.seed,
            split_seed: cfg.effective_split().seed,
            methods: scorers.iter().map(|(l, _)| l.clone()).collect(),
            stage: Some(stage),
            correction: cfg.correction,
            ci_resamples: cfg.ci_resamples,
            total_cells,
            failed_cells,
        },
        scores,
        area_summaries,
        specificity,
        comparison: None,
    })
}

fn method_specificity(
    cfg: &ExperimentConfig,
    method: &str,
    profiles: &[&ResponseProfile],
    pairs: &[(usize, usize)],
    score: impl Fn(usize, usize) -> Option<f64>,
) -> MethodSpecificity {
    let mut out = MethodSpecificity {
        method: method.to_string(),
        dissimilarity: None,
        specificity: None,
        hierarchy_correlation: None,
        mds: None,
        errors: Vec::new(),
    };
    let mut pair_scores = Vec::with_capacity(pairs.len());
    for &(i, j) in pairs {
        match (score(i, j), score(j, i)) {
            (Some(a), Some(b)) if (a + b).is_finite() => pair_scores.push(0.5 * (a + b)),
            _ => {
                out.errors.push(format!(
                    "no bidirectional score for {} and {}",
                    label(profiles[i]),
                    label(profiles[j])
                ));
            }
        }
    }
    if !out.errors.is_empty() {
        return out;
    }
    let labels = profiles
        .iter()
        .map(|p| ProfileLabel { subject: p.subject_id.clone(), area: p.area_id.clone() })
        .collect();
    let levels = profiles.iter().map(|p| p.hierarchy_level).collect();
    let d = match DissimilarityMatrix::from_pair_scores(labels, levels, &pair_scores) {
        Ok(d) => d,
        Err(e) => {
            out.errors.push(e.to_string());
            return out;
        }
    };
    if cfg.metrics.silhouette {
        match silhouette_specificity(&d, |l| l.area.clone()) {
            Ok(s) => out.specificity = Some(s),
            Err(e) => out.errors.push(format!("silhouette: {e}")),
        }
    }
    if cfg.metrics.hierarchy {
        match hierarchy_correlation(&d, |i, _| d.levels[i]) {
            Ok(r) => out.hierarchy_correlation = Some(r),
            Err(e) => out.errors.push(format!("hierarchy: {e}")),
        }
    }
    if cfg.metrics.mds {
        out.mds = Some(mds_embed(&d, cfg.mds_dims, derive_seed(cfg.seed, &format!("mds/{method}"))));
    }
    out.dissimilarity = Some(d);
    out
}
