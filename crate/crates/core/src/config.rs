//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DatasetPaths, FeatureMap, SynthConfig};
use crate::error::{Error, Result};
use crate::eval::PRIMARY_K;
use crate::protocol::FedConfig;
use crate::ranker::RankHyper;
use crate::recall::RecallHyper;
use crate::rerank::RerankPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SynthConfig),
    Files {
        catalog: PathBuf,
        public: PathBuf,
        interactions: PathBuf,
        private: PathBuf,
    },
}

impl DatasetSource {
    pub fn paths(&self) -> Option<DatasetPaths> {
        match self {
            DatasetSource::Files {
                catalog,
                public,
                interactions,
                private,
            } => Some(DatasetPaths {
                catalog: catalog.clone(),
                public: public.clone(),
                interactions: interactions.clone(),
                private: private.clone(),
            }),
            DatasetSource::Synthetic(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Candidates recalled per user.
    pub k: usize,
    /// Items a client requests from its ranked list.
    pub t: usize,
    pub feature_map: FeatureMap,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 20,
            t: 10,
            feature_map: FeatureMap::Crossed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub holdout_per_user: usize,
    pub negatives_per_positive: usize,
    pub k_values: Vec<usize>,
    pub delta_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            holdout_per_user: 1,
            negatives_per_positive: 99,
            k_values: vec![1, 5, PRIMARY_K],
            delta_threshold: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub recall: RecallHyper,
    #[serde(default)]
    pub rank: RankHyper,
    #[serde(default)]
    pub federation: FedConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub policy: RerankPolicy,
    #[serde(default)]
    pub evaluation: EvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn synthetic(synth: SynthConfig, seed: u64) -> Self {
        ExperimentConfig {
            seed,
            output_dir: default_output_dir(),
            dataset: DatasetSource::Synthetic(synth),
            recall: RecallHyper::default(),
            rank: RankHyper::default(),
            federation: FedConfig::default(),
            pipeline: PipelineConfig::default(),
            policy: RerankPolicy::default(),
            evaluation: EvalConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every violation, not just the first. Relative paths are resolved
    /// against `base`.
    pub fn violations(&self, base: &Path) -> Vec<String> {
        let mut v = Vec::new();
        let n_items = match &self.dataset {
            DatasetSource::Synthetic(s) => {
                v.extend(s.violations());
                Some(s.n_items)
            }
            DatasetSource::Files { .. } => {
                let paths = self.dataset.paths().expect("file source");
                for (name, p) in [
                    ("catalog", &paths.catalog),
                    ("public", &paths.public),
                    ("interactions", &paths.interactions),
                    ("private", &paths.private),
                ] {
                    if !base.join(p).exists() {
                        v.push(format!("dataset.{name}: {} does not exist", p.display()));
                    }
                }
                None
            }
        };
        v.extend(self.recall.violations());
        v.extend(self.rank.violations());
        v.extend(self.federation.violations());
        v.extend(self.policy.violations());

        let PipelineConfig { k, t, .. } = self.pipeline;
        if k < 1 {
            v.push("pipeline.k must be >= 1".to_string());
        }
        if let Some(m) = n_items {
            if k > m {
                v.push(format!("pipeline.k ({k}) exceeds the catalog size ({m})"));
            }
        }
        if t <= 1 || t >= k {
            v.push(format!(
                "pipeline.t must satisfy 1 < t < k, got t={t}, k={k}"
            ));
        }
        if self.policy.output_size > t {
            v.push(format!(
                "policy.output_size ({}) exceeds pipeline.t ({t})",
                self.policy.output_size
            ));
        }

        let e = &self.evaluation;
        if e.holdout_per_user < 1 {
            v.push("evaluation.holdout_per_user must be >= 1".to_string());
        }
        if e.negatives_per_positive < 1 {
            v.push("evaluation.negatives_per_positive must be >= 1".to_string());
        }
        if !e.k_values.contains(&PRIMARY_K) || e.k_values.contains(&0) {
            v.push(format!(
                "evaluation.k_values must include {PRIMARY_K} and only positive cutoffs"
            ));
        }
        if !(e.delta_threshold > 0.0 && e.delta_threshold.is_finite()) {
            v.push(format!(
                "evaluation.delta_threshold must be > 0, got {}",
                e.delta_threshold
            ));
        }
        v
    }

    pub fn validate(&self, base: &Path) -> Result<()> {
        let v = self.violations(base);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Rewrites relative dataset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Files {
            catalog,
            public,
            interactions,
            private,
        } = &mut self.dataset
        {
            for p in [catalog, public, interactions, private] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

/// Reads and validates a config file. Paths inside are resolved relative to
/// the file's directory.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = ExperimentConfig::from_toml(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    config.validate(base)?;
    config.resolve_paths(base);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ExperimentConfig {
        ExperimentConfig::synthetic(SynthConfig::default(), 1)
    }

    #[test]
    fn defaults_are_valid() {
        assert_eq!(base().violations(Path::new(".")), Vec::<String>::new());
    }

    #[test]
    fn k_over_m_and_t_over_k_are_two_violations() {
        let mut c = base();
        c.pipeline.k = 400;
        c.pipeline.t = 400;
        c.policy.output_size = 3;
        let v = c.violations(Path::new("."));
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn negative_learning_rate_named() {
        let mut c = base();
        c.rank.learning_rate = -0.1;
        let v = c.violations(Path::new("."));
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("rank.learning_rate"));
    }

    #[test]
    fn toml_round_trip() {
        let c = base();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
