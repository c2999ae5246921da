use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{SplitSpec, Stage};
use crate::error::{IatcError, Result};
use crate::metrics::PairScorer;
use crate::noise::BootstrapOptions;
use crate::rng::derive_seed;
use crate::transforms::{MappingMethod, DEFAULT_SOFTPLUS_SCALE};

/// A method given either by bare kind name (`"ridge"`, `"rsa"`,
/// `"rsa_squared"`) or as a full table with hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MethodEntry {
    Name(String),
    Full(MappingMethod),
}

impl MethodEntry {
    /// `scale` fills in the softplus scale of a bare `exact_zippering`
    /// entry, usually from the dataset metadata.
    pub fn scorer(&self, scale: Option<f64>) -> Result<PairScorer> {
        match self {
            MethodEntry::Name(n) if n == "exact_zippering" => Ok(PairScorer::Mapping(
                MappingMethod::exact_zippering(scale.unwrap_or(DEFAULT_SOFTPLUS_SCALE)),
            )),
            MethodEntry::Name(n) if n == "rsa" => Ok(PairScorer::Rsa { squared: false }),
            MethodEntry::Name(n) if n == "rsa_squared" => Ok(PairScorer::Rsa { squared: true }),
            MethodEntry::Name(n) => Ok(PairScorer::Mapping(MappingMethod::from_kind(n)?)),
            MethodEntry::Full(m) => Ok(PairScorer::Mapping(m.clone())),
        }
    }

    pub fn kind(&self) -> String {
        match self {
            MethodEntry::Name(n) => n.clone(),
            MethodEntry::Full(m) => m.kind().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub silhouette: bool,
    pub hierarchy: bool,
    pub mds: bool,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            silhouette: true,
            hierarchy: true,
            mds: true,
        }
    }
}

impl MetricToggles {
    pub fn none() -> Self {
        MetricToggles {
            silhouette: false,
            hierarchy: false,
            mds: false,
        }
    }

    pub fn any(&self) -> bool {
        self.silhouette || self.hierarchy || self.mds
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    /// Split-half bootstrap with Spearman-Brown reliabilities.
    Bootstrap,
    /// Division by the ncsnr noise ceiling.
    #[serde(alias = "nc_ceiling")]
    Nc,
}

impl Correction {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Correction::None),
            "bootstrap" => Ok(Correction::Bootstrap),
            "nc" | "nc_ceiling" => Ok(Correction::Nc),
            other => Err(IatcError::Config(format!(
                "unknown correction {other:?}; expected none, bootstrap or nc"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub n_boot: usize,
    pub n_splits: usize,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        BootstrapSettings { n_boot: 100, n_splits: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub methods: Vec<MethodEntry>,
    pub split: SplitSpec,
    /// Which profiles to evaluate; defaults to post_nl when present.
    pub stage: Option<Stage>,
    /// Restrict evaluation to these areas.
    pub areas: Option<Vec<String>>,
    pub metrics: MetricToggles,
    pub correction: Correction,
    pub bootstrap: BootstrapSettings,
    /// Reduced bootstrap preset: 16 samples, one split.
    pub fast: bool,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub seed: u64,
    pub ci_resamples: usize,
    /// Map the other subjects' pooled neurons to each held-out subject.
    pub pool_sources: bool,
    /// Largest tolerated fraction of failed cells before a run counts as
    /// a partial failure.
    pub failure_threshold: f64,
    pub mds_dims: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            output: None,
            methods: vec![MethodEntry::Name("ridge".into())],
            split: SplitSpec::default(),
            stage: None,
            areas: None,
            metrics: MetricToggles::default(),
            correction: Correction::None,
            bootstrap: BootstrapSettings::default(),
            fast: false,
            jobs: 1,
            seed: 0,
            ci_resamples: 1000,
            pool_sources: false,
            failure_threshold: 0.0,
            mds_dims: 2,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| IatcError::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| IatcError::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| IatcError::Config(format!("{}: {e}", path.display())))?
        };
        Ok(parsed)
    }

    /// Methods paired with unique labels (repeated kinds get `#2`, `#3`, ...).
    pub fn scorers(&self, scale: Option<f64>) -> Result<Vec<(String, PairScorer)>> {
        if self.methods.is_empty() {
            return Err(IatcError::Config("no methods configured".into()));
        }
        let mut out: Vec<(String, PairScorer)> = Vec::new();
        for entry in &self.methods {
            let scorer = entry.scorer(scale)?;
            let kind = entry.kind();
            let seen = out
                .iter()
                .filter(|(l, _)| l == &kind || l.starts_with(&format!("{kind}#")))
                .count();
            let label = if seen == 0 { kind } else { format!("{kind}#{}", seen + 1) };
            out.push((label, scorer));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.scorers(None)?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(IatcError::Config("split.train_fraction must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_threshold) {
            return Err(IatcError::Config("failure_threshold must lie in [0, 1]".into()));
        }
        if self.mds_dims == 0 {
            return Err(IatcError::Config("mds_dims must be positive".into()));
        }
        Ok(())
    }

    /// The configured split with its seed tied to the master seed.
    pub fn effective_split(&self) -> SplitSpec {
        SplitSpec {
            seed: derive_seed(self.seed, &format!("split/{}", self.split.seed)),
            ..self.split
        }
    }

    pub fn bootstrap_options(&self, seed: u64) -> BootstrapOptions {
        if self.fast {
            BootstrapOptions {
                train_fraction: self.split.train_fraction,
                ..BootstrapOptions::fast(seed)
            }
        } else {
            BootstrapOptions {
                n_boot: self.bootstrap.n_boot,
                n_splits: self.bootstrap.n_splits,
                train_fraction: self.split.train_fraction,
                seed,
            }
        }
    }

    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            dataset: None,
            output: None,
            jobs: 0,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_mixed_method_entries() {
        let cfg: ExperimentConfig = toml::from_str(
            r#"
            methods = ["ridge", { kind = "exact_zippering", c = 50.0 }, "rsa"]
            seed = 7
            correction = "nc_ceiling"
            [split]
            train_fraction = 0.75
            [metrics]
            mds = false
            "#,
        )
        .unwrap();
        let labels: Vec<String> = cfg.scorers(None).unwrap().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["ridge", "exact_zippering", "rsa"]);
        assert_eq!(cfg.correction, Correction::Nc);
        assert_eq!(cfg.split.fold_count, 5);
        assert!(cfg.metrics.silhouette && !cfg.metrics.mds);
        match &cfg.methods[1] {
            MethodEntry::Full(MappingMethod::ExactZippering { c, invert_source, .. }) => {
                assert_eq!(*c, 50.0);
                assert!(*invert_source);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_names_are_config_errors() {
        let cfg = ExperimentConfig {
            methods: vec![MethodEntry::Name("ridge".into()), MethodEntry::Name("cka".into())],
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(IatcError::Config(_))));
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn repeated_kinds_get_distinct_labels() {
        let cfg = ExperimentConfig {
            methods: vec![MethodEntry::Name("ridge".into()), MethodEntry::Name("ridge".into())],
            ..Default::default()
        };
        let labels: Vec<String> = cfg.scorers(None).unwrap().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, ["ridge", "ridge#2"]);
    }

    #[test]
    fn hash_ignores_runtime_fields() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            jobs: 8,
            output: Some("elsewhere".into()),
            ..Default::default()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seed: 1, ..Default::default() };
        assert_ne!(a.hash(), c.hash());
    }
}
