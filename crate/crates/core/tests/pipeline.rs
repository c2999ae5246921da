use iatc::data::{PopulationDataset, ResponseMatrix, ResponseProfile, Stage};
use iatc::pipeline::{
    emit_report, read_report, run_model_comparison, run_population_eval, Correction, ExperimentConfig,
    MethodEntry, MetricToggles, ReportKind, MDS_CSV, REPORT_JSON, SCORES_CSV,
};
use iatc::simulator::{generate_population, teacher_model, PopulationConfig};
use iatc::IatcError;

fn population(subjects: usize, layers: usize) -> (PopulationConfig, PopulationDataset) {
    let cfg = PopulationConfig {
        layers,
        latent_dims: vec![4; layers],
        neurons: 8,
        subjects,
        stimuli: 120,
        trials: 6,
        keep_trials: true,
        ..Default::default()
    };
    let ds = generate_population(&cfg).unwrap();
    (cfg, ds)
}

fn config(methods: &[&str]) -> ExperimentConfig {
    ExperimentConfig {
        methods: methods.iter().map(|m| MethodEntry::Name(m.to_string())).collect(),
        ci_resamples: 200,
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn two_subjects_one_area_gives_one_pair_two_directions() {
    let (_, ds) = population(2, 1);
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        ..config(&["ridge"])
    };
    let report = run_population_eval(&cfg, &ds).unwrap();
    assert_eq!(report.scores.len(), 2);
    assert_eq!(report.scores[0].pair, "subject0|subject1");
    assert_ne!(report.scores[0].direction, report.scores[1].direction);
    assert_eq!(report.area_summaries.len(), 1);
    assert_eq!(report.area_summaries[0].n_pairs, 1);
    assert!(report.specificity.is_empty());
}

#[test]
fn single_subject_is_rejected() {
    let (_, ds) = population(1, 2);
    let err = run_population_eval(&config(&["ridge"]), &ds).unwrap_err();
    assert!(err.to_string().contains("at least 2 subjects"), "{err}");
}

#[test]
fn unknown_area_is_a_config_error() {
    let (_, ds) = population(2, 1);
    let cfg = ExperimentConfig {
        areas: Some(vec!["v4".into()]),
        ..config(&["ridge"])
    };
    assert!(matches!(run_population_eval(&cfg, &ds), Err(IatcError::Config(_))));
}

#[test]
fn full_evaluation_counts_intervals_and_specificity() {
    let (_, ds) = population(3, 2);
    let report = run_population_eval(&config(&["ridge", "rsa"]), &ds).unwrap();
    // 3 pairs × 2 areas × 2 methods × 2 directions
    assert_eq!(report.scores.len(), 24);
    // all 15 unordered pairs of 6 profiles, both directions, per method
    assert_eq!(report.provenance.total_cells, 2 * 15 * 2);
    assert_eq!(report.provenance.failed_cells, 0);
    for r in &report.scores {
        let (lo, s, hi) = (r.ci_low.unwrap(), r.score.unwrap(), r.ci_high.unwrap());
        assert!(lo <= s && s <= hi, "{r:?}");
    }
    for a in &report.area_summaries {
        assert!(a.ci_low.unwrap() <= a.score.unwrap() && a.score.unwrap() <= a.ci_high.unwrap());
    }
    assert_eq!(report.specificity.len(), 2);
    for spec in &report.specificity {
        assert!(spec.errors.is_empty(), "{:?}", spec.errors);
        let d = spec.dissimilarity.as_ref().unwrap();
        assert_eq!(d.len(), 6);
        d.validate().unwrap();
        assert_eq!(spec.mds.as_ref().unwrap().coords.len(), 6);
        assert!(spec.specificity.is_some() && spec.hierarchy_correlation.is_some());
    }
    // RSA is symmetric, so both directions agree
    let rsa: Vec<_> = report.scores.iter().filter(|r| r.method == "rsa").collect();
    assert_eq!(rsa[0].score, rsa[1].score);
}

#[test]
fn emitted_report_round_trips_and_csvs_have_expected_rows() {
    let (_, ds) = population(3, 2);
    let report = run_population_eval(&config(&["ridge"]), &ds).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    assert_eq!(read_report(&dir.path().join(REPORT_JSON)).unwrap(), report);
    let scores = std::fs::read_to_string(dir.path().join(SCORES_CSV)).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next().unwrap(), "pair,area,method,direction,score,ci_low,ci_high");
    assert_eq!(lines.count(), 3 * 2 * 2);
    let mds = std::fs::read_to_string(dir.path().join(MDS_CSV)).unwrap();
    assert_eq!(mds.lines().count(), 1 + 6);
}

#[test]
fn empty_metrics_report_has_no_specificity_block() {
    let (_, ds) = population(2, 2);
    let cfg = ExperimentConfig {
        metrics: MetricToggles::none(),
        ..config(&["ridge"])
    };
    let report = run_population_eval(&cfg, &ds).unwrap();
    let json = serde_json::to_value(&report).unwrap();
    assert!(json.get("specificity").is_none());
    assert!(json.get("provenance").is_some());
}

#[test]
fn worker_count_does_not_change_the_report() {
    let (_, ds) = population(3, 2);
    let one = run_population_eval(&ExperimentConfig { jobs: 1, ..config(&["ridge", "soft_matching"]) }, &ds).unwrap();
    let four = run_population_eval(&ExperimentConfig { jobs: 4, ..config(&["ridge", "soft_matching"]) }, &ds).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
}

#[test]
fn failed_cells_are_recorded_not_fatal() {
    let (_, ds) = population(2, 1);
    // the generator stores no ncsnr, so every noise-ceiling cell fails
    let cfg = ExperimentConfig {
        correction: Correction::Nc,
        ..config(&["ridge"])
    };
    let report = run_population_eval(&cfg, &ds).unwrap();
    assert_eq!(report.provenance.failed_cells, report.provenance.total_cells);
    assert!(report.scores.iter().all(|r| r.score.is_none() && r.error.is_some()));
    assert!((report.failure_fraction() - 1.0).abs() < 1e-12);
    assert!(report.specificity[0].dissimilarity.is_none());
}

#[test]
fn pooled_sources_map_to_each_held_out_subject() {
    let (_, ds) = population(3, 1);
    let cfg = ExperimentConfig {
        pool_sources: true,
        metrics: MetricToggles::none(),
        ..config(&["ridge"])
    };
    let report = run_population_eval(&cfg, &ds).unwrap();
    assert_eq!(report.scores.len(), 3);
    assert!(report.scores.iter().all(|r| r.source.starts_with("pooled-")));
    assert!(report.scores.iter().all(|r| r.score.unwrap() > 0.5));
}

#[test]
fn bootstrap_correction_runs_on_trials() {
    let (_, ds) = population(2, 1);
    let cfg = ExperimentConfig {
        correction: Correction::Bootstrap,
        fast: true,
        metrics: MetricToggles::none(),
        ..config(&["ridge"])
    };
    let report = run_population_eval(&cfg, &ds).unwrap();
    assert_eq!(report.provenance.failed_cells, 0);
    assert!(report.scores.iter().all(|r| r.score.unwrap().is_finite()));
}

fn models_dataset(pcfg: &PopulationConfig, names: &[(&str, u64)]) -> PopulationDataset {
    let mut profiles = Vec::new();
    for (name, seed) in names {
        profiles.extend(teacher_model(pcfg, 6, name, *seed).unwrap());
    }
    PopulationDataset::new(profiles, Default::default()).unwrap()
}

#[test]
fn identical_models_have_zero_separation() {
    let (pcfg, ds) = population(2, 2);
    let models = models_dataset(&pcfg, &[("a", 5), ("b", 5)]);
    let report = run_model_comparison(&config(&["ridge"]), &models, &ds).unwrap();
    assert_eq!(report.kind, ReportKind::ModelComparison);
    let cmp = report.comparison.as_ref().unwrap();
    // 2 models × 2 layers × (2 subjects × 2 areas)
    assert_eq!(cmp.cells.len(), 16);
    assert_eq!(report.scores.len(), 32);
    assert_eq!(cmp.model_separation.len(), 3);
    for row in &cmp.model_separation {
        assert_eq!(row.separation, Some(0.0), "{row:?}");
    }
    for c in &cmp.cells {
        let avg = c.average.unwrap();
        assert!((avg - 0.5 * (c.model_to_brain.unwrap() + c.brain_to_model.unwrap())).abs() < 1e-15);
    }
}

#[test]
fn different_models_separate() {
    let (pcfg, ds) = population(2, 2);
    let models = models_dataset(&pcfg, &[("a", 5), ("b", 6)]);
    let report = run_model_comparison(&config(&["ridge"]), &models, &ds).unwrap();
    let cmp = report.comparison.unwrap();
    assert!(cmp.model_separation.iter().all(|r| r.separation.unwrap() > 0.0));
}

#[test]
fn stimulus_mismatch_is_an_error() {
    let (_, ds) = population(2, 1);
    let m = ResponseMatrix::from_values(nalgebra::DMatrix::from_fn(7, 3, |i, j| (i + j) as f64)).unwrap();
    let models = PopulationDataset::new(
        vec![ResponseProfile::new(m, "net", "l1", 1.0, Stage::Unspecified)],
        Default::default(),
    )
    .unwrap();
    let err = run_model_comparison(&config(&["ridge"]), &models, &ds).unwrap_err();
    assert!(matches!(err, IatcError::DimensionMismatch { .. }), "{err}");
}
