//! `iatc` command-line tool.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iatc::data::{load_dataset, save_dataset, split_stimuli, Stage};
use iatc::metrics::{predictivity, PairScorer};
use iatc::pipeline::{
    emit_report, read_report, render_csvs, run_model_comparison, run_population_eval, scorer_input,
    stored_scale, Correction, EvaluationReport, ExperimentConfig, MethodEntry,
};
use iatc::simulator::{
    fit_activation_candidates, generate_population, simulate_spike_counts, PopulationConfig, SpikingConfig,
};
use iatc::IatcError;

const EXIT_CONFIG: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "iatc", version, about = "Cross-subject neural response mapping and scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic layered population and write it as a dataset.
    Simulate {
        /// Generator config (TOML or JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the teacher seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit one method between two profiles and print both directions.
    Map {
        #[arg(long)]
        dataset: PathBuf,
        /// Source profile as subject/area.
        #[arg(long)]
        source: String,
        /// Target profile as subject/area.
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "ridge")]
        method: String,
        #[arg(long, default_value = "post_nl")]
        stage: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the fitted source → target map as JSON.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Cross-subject evaluation of a population dataset.
    Evaluate(RunArgs),
    /// Bidirectional comparison of candidate models with a population.
    CompareModels {
        #[command(flatten)]
        run: RunArgs,
        /// Dataset whose profiles are model layers (subject = model name).
        #[arg(long)]
        models: PathBuf,
    },
    /// Threshold spiking neuron: analytic versus empirical mean counts and
    /// candidate activation fits over a sub-threshold input grid.
    SpikingDemo {
        #[arg(long, default_value_t = -3.0, allow_hyphen_values = true)]
        mu_min: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        mu_max: f64,
        #[arg(long, default_value_t = 16)]
        points: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the curve and fits as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render scores.csv and mds.csv from a report.json.
    Report {
        /// Path to report.json.
        #[arg(long)]
        report: PathBuf,
        /// Directory for the CSVs; defaults to the report's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated method kinds, replacing the configured list.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// none, bootstrap or nc.
    #[arg(long)]
    correction: Option<String>,
    /// Reduced bootstrap: 16 samples, one split.
    #[arg(long)]
    fast: bool,
    /// Map pooled neurons of the other subjects to each held-out subject.
    #[arg(long)]
    pool_sources: bool,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, IatcError> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        if let Some(m) = &self.methods {
            cfg.methods = m.iter().map(|k| MethodEntry::Name(k.trim().to_string())).collect();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(c) = &self.correction {
            cfg.correction = Correction::parse(c)?;
        }
        cfg.fast |= self.fast;
        cfg.pool_sources |= self.pool_sources;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, IatcError> {
    p.as_deref()
        .ok_or_else(|| IatcError::Config(format!("no {what} given (flag or config)")))
}

enum Outcome {
    Done,
    TooManyFailures(f64),
}

fn finish(report: &EvaluationReport, cfg: &ExperimentConfig) -> Result<Outcome, IatcError> {
    let out = cfg.output.clone().unwrap_or_else(|| PathBuf::from("iatc-out"));
    for path in emit_report(report, &out)? {
        println!("wrote {}", path.display());
    }
    let p = &report.provenance;
    println!("cells: {} total, {} failed", p.total_cells, p.failed_cells);
    let frac = report.failure_fraction();
    if frac > cfg.failure_threshold {
        Ok(Outcome::TooManyFailures(frac))
    } else {
        Ok(Outcome::Done)
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

fn parse_profile(s: &str) -> Result<(&str, &str), IatcError> {
    s.split_once('/')
        .ok_or_else(|| IatcError::Config(format!("profile {s:?} is not subject/area")))
}

fn run(cli: Cli) -> Result<Outcome, IatcError> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let mut cfg = match config {
                Some(p) => PopulationConfig::from_path(&p)?,
                None => PopulationConfig::default(),
            };
            if let Some(s) = seed {
                cfg.teacher_seed = s;
            }
            let ds = generate_population(&cfg)?;
            let manifest = save_dataset(&ds, &out)?;
            println!(
                "wrote {} profiles ({} subjects, {} stimuli) to {}",
                ds.profiles().len(),
                cfg.subjects,
                cfg.stimuli,
                manifest.display()
            );
        }
        Command::Map { dataset, source, target, method, stage, seed, dump } => {
            let ds = load_dataset(&dataset)?;
            let stage = Stage::parse(&stage)?;
            let scale = stored_scale(&ds);
            let method = match MethodEntry::Name(method).scorer(scale)? {
                PairScorer::Mapping(m) => m.with_seed(seed),
                PairScorer::Rsa { .. } => {
                    return Err(IatcError::Config("map needs a fitted method, not RSA".into()));
                }
            };
            let scorer = PairScorer::Mapping(method.clone());
            let get = |s: &str| -> Result<_, IatcError> {
                let (subject, area) = parse_profile(s)?;
                ds.get(subject, area, stage)
                    .ok_or_else(|| IatcError::Config(format!("no {stage} profile {s} in the dataset")))
            };
            let (a, b) = (get(&source)?, get(&target)?);
            let cfg = ExperimentConfig { seed, ..Default::default() };
            let split = split_stimuli(ds.n_stimuli(), &cfg.effective_split())?;
            let xa = scorer_input(a, &scorer, scale);
            let xb = scorer_input(b, &scorer, scale);
            let fwd = predictivity(&xa, &xb, &method, &split)?.median_r2;
            let bwd = predictivity(&xb, &xa, &method, &split)?.median_r2;
            println!("{source} -> {target}: {fwd:.6}");
            println!("{target} -> {source}: {bwd:.6}");
            println!("bidirectional: {:.6}", 0.5 * (fwd + bwd));
            if let Some(path) = dump {
                let mut map = method.fit(&xa, &xb)?;
                map.target_neuron_ids = Some(b.matrix.neuron_ids().to_vec());
                let json = serde_json::to_string_pretty(&map).map_err(|e| IatcError::Serialization(e.to_string()))?;
                std::fs::write(&path, json).map_err(|e| IatcError::io(&path, e))?;
                println!("wrote {}", path.display());
            }
        }
        Command::Evaluate(args) => {
            let cfg = args.config()?;
            let ds = load_dataset(required(&cfg.dataset, "dataset")?)?;
            let report = run_population_eval(&cfg, &ds)?;
            for a in &report.area_summaries {
                println!(
                    "{:<20} {:<16} {} [{}, {}]",
                    a.method,
                    a.area,
                    fmt(a.score),
                    fmt(a.ci_low),
                    fmt(a.ci_high)
                );
            }
            for s in &report.specificity {
                let sil = s.specificity.as_ref().map(|r| r.silhouette_mean);
                println!(
                    "{:<20} silhouette {} hierarchy {}",
                    s.method,
                    fmt(sil),
                    fmt(s.hierarchy_correlation)
                );
            }
            return finish(&report, &cfg);
        }
        Command::CompareModels { run, models } => {
            let cfg = run.config()?;
            let population = load_dataset(required(&cfg.dataset, "dataset")?)?;
            let models = load_dataset(&models)?;
            let report = run_model_comparison(&cfg, &models, &population)?;
            if let Some(cmp) = &report.comparison {
                for r in &cmp.model_separation {
                    println!("{:<20} {:<16} separation {}", r.method, r.view, fmt(r.separation));
                }
            }
            return finish(&report, &cfg);
        }
        Command::SpikingDemo { mu_min, mu_max, points, trials, seed, out } => {
            if points < 4 || !(mu_max > mu_min) {
                return Err(IatcError::Config("need at least 4 points and mu_max > mu_min".into()));
            }
            let grid: Vec<f64> = (0..points)
                .map(|i| mu_min + (mu_max - mu_min) * i as f64 / (points - 1) as f64)
                .collect();
            let mut curve = Vec::new();
            println!("{:>8} {:>10} {:>10}", "mu", "empirical", "analytic");
            for (i, mu) in grid.iter().enumerate() {
                let cfg = SpikingConfig { mu: *mu, trials, seed: seed.wrapping_add(i as u64), ..Default::default() };
                let c = simulate_spike_counts(&cfg)?;
                println!("{mu:>8.3} {:>10.3} {:>10.3}", c.mean, c.analytic_mean);
                curve.push(c);
            }
            let means: Vec<f64> = curve.iter().map(|c| c.mean).collect();
            let fits = fit_activation_candidates(&grid, &means)?;
            for f in &fits {
                println!("{:?}: residual {:.6}", f.activation, f.residual);
            }
            if let Some(path) = out {
                let json = serde_json::json!({ "mu": grid, "counts": curve, "fits": fits });
                let text = serde_json::to_string_pretty(&json).map_err(|e| IatcError::Serialization(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| IatcError::io(&path, e))?;
            }
        }
        Command::Report { report, out } => {
            let parsed = read_report(&report)?;
            let dir = out.unwrap_or_else(|| report.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| IatcError::io(&dir, e))?;
            for path in render_csvs(&parsed, &dir)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(Outcome::Done)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::TooManyFailures(frac)) => {
            eprintln!("error: {:.1}% of cells failed, above the configured threshold", 100.0 * frac);
            ExitCode::from(EXIT_PARTIAL)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { EXIT_DATA } else { EXIT_CONFIG })
        }
    }
}
