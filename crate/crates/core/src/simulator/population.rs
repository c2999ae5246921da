use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gamma_trial;
use crate::data::{
    default_neuron_ids, default_stimulus_ids, PopulationDataset, ResponseMatrix, ResponseProfile, Stage,
    TrialTensor,
};
use crate::error::{IatcError, Result};
use crate::rng::{derive_indexed, derive_seed, rng_from_seed, Rng};
use crate::stats::{column_means, column_stds};
use crate::transforms::softplus;

/// Metadata key holding the factor post-NL responses were divided by.
pub const SCALE_KEY: &str = "softplus_scale";

const MAX_MIXING_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub layers: usize,
    /// Teacher latent dimension per layer.
    pub latent_dims: Vec<usize>,
    /// Neurons per subject per layer.
    pub neurons: usize,
    pub subjects: usize,
    pub stimuli: usize,
    pub teacher_seed: u64,
    /// One seed per subject; derived from the teacher seed when empty.
    pub subject_seeds: Vec<u64>,
    pub softplus_scale: f64,
    pub trials: usize,
    /// Largest accepted condition number of a subject mixing matrix.
    pub kappa_max: f64,
    /// Standard deviation of each pre-activation across stimuli.
    pub mixing_gain: f64,
    /// Range of the per-neuron offsets added before the nonlinearity.
    pub offset_range: [f64; 2],
    /// Gain of the teacher weights between consecutive layers.
    pub teacher_gain: f64,
    /// Per-neuron offsets are raised until no pre-activation falls below
    /// this value, so every trial-averaged rate stays positive.
    pub pre_floor: f64,
    /// Store per-trial samples on the post-NL profiles.
    pub keep_trials: bool,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            layers: 3,
            latent_dims: vec![30, 30, 30],
            neurons: 60,
            subjects: 4,
            stimuli: 2000,
            teacher_seed: 0,
            subject_seeds: Vec::new(),
            softplus_scale: 100.0,
            trials: 50,
            kappa_max: 30.0,
            mixing_gain: 2.0,
            offset_range: [-1.0, 1.0],
            teacher_gain: 2.0,
            pre_floor: -8.0,
            keep_trials: false,
        }
    }
}

impl PopulationConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IatcError::io(path, e))?;
        let bad = |e: &dyn std::fmt::Display| IatcError::Config(format!("{}: {e}", path.display()));
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| bad(&e))
        } else {
            toml::from_str(&text).map_err(|e| bad(&e))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(IatcError::Config(m.to_string()));
        if self.layers == 0 || self.latent_dims.len() != self.layers {
            return bad("latent_dims needs one entry per layer");
        }
        if self.latent_dims.contains(&0) || self.neurons == 0 {
            return bad("latent and neuron counts must be positive");
        }
        if self.latent_dims.iter().any(|d| *d > self.neurons) {
            return bad("latent dimension cannot exceed the neuron count");
        }
        if self.subjects == 0 || self.stimuli < 4 || self.trials == 0 {
            return bad("need subjects, at least 4 stimuli and at least one trial");
        }
        if !self.subject_seeds.is_empty() && self.subject_seeds.len() != self.subjects {
            return bad("subject_seeds must be empty or have one seed per subject");
        }
        if !(self.softplus_scale > 0.0) || !(self.kappa_max >= 1.0) || !(self.mixing_gain > 0.0) {
            return bad("softplus_scale, mixing_gain must be positive and kappa_max >= 1");
        }
        if !(self.offset_range[0] <= self.offset_range[1]) || !(self.teacher_gain > 0.0) || !self.pre_floor.is_finite() {
            return bad("offset_range must be ordered and teacher_gain positive");
        }
        Ok(())
    }

    pub fn subject_seed(&self, s: usize) -> u64 {
        match self.subject_seeds.get(s) {
            Some(seed) => *seed,
            None => derive_indexed(derive_seed(self.teacher_seed, "subjects"), s as u64),
        }
    }
}

fn gaussian(rows: usize, cols: usize, sd: f64, rng: &mut Rng) -> DMatrix<f64> {
    let n = Normal::new(0.0, sd).expect("finite sd");
    DMatrix::from_fn(rows, cols, |_, _| n.sample(rng))
}

fn standardize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(&m);
    let stds = column_stds(&m);
    for j in 0..m.ncols() {
        let sd = if stds[j] > 0.0 { stds[j] } else { 1.0 };
        m.column_mut(j).apply(|v| *v = (*v - means[j]) / sd);
    }
    m
}

/// Teacher latents of every layer, shared by all subjects.
fn teacher_latents(cfg: &PopulationConfig) -> Vec<DMatrix<f64>> {
    let mut rng = rng_from_seed(derive_seed(cfg.teacher_seed, "latents"));
    let mut w_rng = rng_from_seed(derive_seed(cfg.teacher_seed, "teacher_weights"));
    let mut z = vec![gaussian(cfg.stimuli, cfg.latent_dims[0], 1.0, &mut rng)];
    for l in 1..cfg.layers {
        let d_in = cfg.latent_dims[l - 1];
        let w = gaussian(d_in, cfg.latent_dims[l], cfg.teacher_gain / (d_in as f64).sqrt(), &mut w_rng);
        let h = (&z[l - 1] * w).map(softplus);
        z.push(standardize(h));
    }
    z
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    sv.max() / sv.min()
}

/// Mixing matrix (d × N) and offsets for one subject layer.
fn mixing(cfg: &PopulationConfig, d: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let mut rng = rng_from_seed(seed);
    let sd = cfg.mixing_gain / (d as f64).sqrt();
    for _ in 0..MAX_MIXING_ATTEMPTS {
        let a = gaussian(d, cfg.neurons, sd, &mut rng);
        if condition_number(&a) <= cfg.kappa_max {
            let [lo, hi] = cfg.offset_range;
            let b = if hi > lo {
                let u = Uniform::new(lo, hi).expect("ordered range");
                (0..cfg.neurons).map(|_| u.sample(&mut rng)).collect()
            } else {
                vec![lo; cfg.neurons]
            };
            return Ok((a, b));
        }
    }
    Err(IatcError::Config(format!(
        "no mixing matrix with condition number <= {} after {MAX_MIXING_ATTEMPTS} attempts",
        cfg.kappa_max
    )))
}

fn pre_activation(z: &DMatrix<f64>, a: &DMatrix<f64>, b: &[f64], floor: f64) -> DMatrix<f64> {
    let mut pre = z * a;
    for (j, bj) in b.iter().enumerate() {
        let lowest = pre.column(j).min();
        pre.column_mut(j).add_scalar_mut(bj.max(floor - lowest));
    }
    pre
}

fn area(l: usize) -> String {
    format!("layer{}", l + 1)
}

/// Layered synthetic population. Every subject's pre-NL responses are an
/// affine image of the shared teacher latents; post-NL responses are trial
/// averages of Gamma samples at rate c · softplus(pre), stored divided by c.
pub fn generate_population(cfg: &PopulationConfig) -> Result<PopulationDataset> {
    cfg.validate()?;
    let z = teacher_latents(cfg);
    let stimulus_ids = default_stimulus_ids(cfg.stimuli);
    let neuron_ids = default_neuron_ids(cfg.neurons);
    let c = cfg.softplus_scale;
    let tasks: Vec<(usize, usize)> = (0..cfg.subjects)
        .flat_map(|s| (0..cfg.layers).map(move |l| (s, l)))
        .collect();
    let made = tasks
        .par_iter()
        .map(|&(s, l)| -> Result<[ResponseProfile; 2]> {
            let seed = cfg.subject_seed(s);
            let (a, b) = mixing(cfg, cfg.latent_dims[l], derive_seed(seed, &format!("mixing/{l}")))?;
            let pre = pre_activation(&z[l], &a, &b, cfg.pre_floor);
            let rates = pre.map(|v| c * softplus(v));
            let mut rng = rng_from_seed(derive_seed(seed, &format!("trials/{l}")));
            let mut sum = DMatrix::zeros(cfg.stimuli, cfg.neurons);
            let mut kept = Vec::new();
            for _ in 0..cfg.trials {
                let t = gamma_trial(&rates, &mut rng);
                sum += &t;
                if cfg.keep_trials {
                    kept.push(t / c);
                }
            }
            let post = sum / (cfg.trials as f64 * c);
            let subject = format!("subject{s}");
            let level = (l + 1) as f64;
            let pre_p = ResponseProfile::new(
                ResponseMatrix::new(pre, stimulus_ids.clone(), neuron_ids.clone())?,
                subject.clone(),
                area(l),
                level,
                Stage::PreNl,
            );
            let mut post_p = ResponseProfile::new(
                ResponseMatrix::new(post, stimulus_ids.clone(), neuron_ids.clone())?,
                subject,
                area(l),
                level,
                Stage::PostNl,
            );
            if cfg.keep_trials {
                post_p = post_p.with_trials(TrialTensor::new(kept, true)?)?;
            }
            Ok([pre_p, post_p])
        })
        .collect::<Result<Vec<_>>>()?;
    let profiles = made.into_iter().flatten().collect();
    let mut metadata = BTreeMap::new();
    metadata.insert(SCALE_KEY.to_string(), serde_json::json!(c));
    metadata.insert("post_nl_divided_by_scale".to_string(), serde_json::json!(true));
    metadata.insert("teacher_seed".to_string(), serde_json::json!(cfg.teacher_seed));
    metadata.insert(
        "subject_seeds".to_string(),
        serde_json::json!((0..cfg.subjects).map(|s| cfg.subject_seed(s)).collect::<Vec<_>>()),
    );
    metadata.insert("trials".to_string(), serde_json::json!(cfg.trials));
    metadata.insert(
        "generator".to_string(),
        serde_json::to_value(cfg).map_err(|e| IatcError::Serialization(e.to_string()))?,
    );
    PopulationDataset::new(profiles, metadata)
}

/// Noise-free candidate model built from the same teacher: per layer,
/// softplus of a fresh affine image of the latents with `neurons` units.
pub fn teacher_model(cfg: &PopulationConfig, neurons: usize, name: &str, seed: u64) -> Result<Vec<ResponseProfile>> {
    cfg.validate()?;
    let model_cfg = PopulationConfig { neurons, ..cfg.clone() };
    model_cfg.validate()?;
    let z = teacher_latents(cfg);
    (0..cfg.layers)
        .map(|l| {
            let (a, b) = mixing(&model_cfg, cfg.latent_dims[l], derive_seed(seed, &format!("mixing/{l}")))?;
            let post = pre_activation(&z[l], &a, &b, cfg.pre_floor).map(softplus);
            Ok(ResponseProfile::new(
                ResponseMatrix::new(post, default_stimulus_ids(cfg.stimuli), default_neuron_ids(neurons))?,
                name,
                area(l),
                (l + 1) as f64,
                Stage::Unspecified,
            ))
        })
        .collect()
}
