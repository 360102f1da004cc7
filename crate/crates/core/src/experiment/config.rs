use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghmm::EmConfig;
use crate::training::TrainConfig;

/// The generating HMM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmSpec {
    pub states: usize,
    pub dim: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Hankel training followed by spectral recovery.
    Spec,
    /// Direct likelihood training of the same automaton.
    Sgd,
    /// Baum–Welch Gaussian HMM with `k` states.
    Em,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Spec => "spec",
            ModelKind::Sgd => "sgd",
            ModelKind::Em => "em",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spec" => Ok(ModelKind::Spec),
            "sgd" => Ok(ModelKind::Sgd),
            "em" => Ok(ModelKind::Em),
            _ => Err(Error::Config(format!(
                "unknown model `{s}` (expected spec, sgd or em)"
            ))),
        }
    }

    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// A whole experiment. `train_sizes` counts sequences per training length;
/// the Hankel model gets one set per length `L, 2L, 2L+1` and the baselines
/// the union of all three.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub hmm: HmmSpec,
    pub train_sizes: Vec<usize>,
    pub noise_stds: Vec<f64>,
    pub test_lengths: Vec<usize>,
    pub test_size: usize,
    pub seeds: Vec<u64>,
    pub models: Vec<ModelKind>,
    /// Automaton sizes (`states`, `mixtures`, `rank`, `hankel_l`) and
    /// optimizer settings for the Hankel model.
    pub train: TrainConfig,
    /// Settings for the directly trained automaton; `None` reuses `train`.
    pub sgd: Option<TrainConfig>,
    pub em: EmConfig,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    /// The desk-scale replica.
    fn default() -> Self {
        Self {
            hmm: HmmSpec {
                states: 10,
                dim: 2,
                seed: 2024,
            },
            train_sizes: vec![100, 1000],
            noise_stds: vec![0.0, 1.0],
            test_lengths: vec![8, 16, 32, 64, 100],
            test_size: 200,
            seeds: vec![0, 1, 2],
            models: vec![ModelKind::Spec, ModelKind::Sgd, ModelKind::Em],
            train: TrainConfig {
                learning_rate: 0.03,
                feature_dim: Some(3),
                tie_cores: true,
                ..TrainConfig::default()
            },
            sgd: None,
            em: EmConfig::default(),
            output_dir: None,
        }
    }
}

fn no_duplicates<T: std::hash::Hash + Eq>(
    items: impl IntoIterator<Item = T>,
    what: &str,
) -> Result<()> {
    let mut seen = HashSet::new();
    for x in items {
        if !seen.insert(x) {
            return Err(Error::Config(format!("{what} contains a duplicate")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.hmm.states == 0 || self.hmm.dim == 0 {
            return bad("hmm.states and hmm.dim must be at least 1");
        }
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return bad("train_sizes must be a nonempty list of sizes >= 1");
        }
        if self.noise_stds.is_empty()
            || self
                .noise_stds
                .iter()
                .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("noise_stds must be a nonempty list of finite values >= 0");
        }
        if self.test_lengths.is_empty() || self.test_lengths.contains(&0) {
            return bad("test_lengths must be a nonempty list of lengths >= 1");
        }
        if self.test_size == 0 {
            return bad("test_size must be at least 1");
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty");
        }
        if self.models.is_empty() {
            return bad("models must not be empty");
        }
        no_duplicates(&self.train_sizes, "train_sizes")?;
        no_duplicates(self.noise_stds.iter().map(|s| s.to_bits()), "noise_stds")?;
        no_duplicates(&self.test_lengths, "test_lengths")?;
        no_duplicates(&self.seeds, "seeds")?;
        no_duplicates(&self.models, "models")?;
        self.train.validate()?;
        if let Some(sgd) = &self.sgd {
            sgd.validate()?;
        }
        self.em.validate()
    }

    pub fn sgd_config(&self) -> &TrainConfig {
        self.sgd.as_ref().unwrap_or(&self.train)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        // a run manifest carries the resolved config under "config"
        let v = match v {
            serde_json::Value::Object(mut m)
                if m.contains_key("config") && !m.contains_key("hmm") =>
            {
                m.remove("config").expect("key checked")
            }
            other => other,
        };
        let cfg: ExperimentConfig = serde_json::from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reads an experiment config, or the config stored in a run manifest, and
/// validates it.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::from_json(&std::fs::read_to_string(path)?)
}
