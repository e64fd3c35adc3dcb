//! Run configuration: one TOML file, every field optional.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::ProjectionConfig;
use crate::dataset::Axis;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PerplexityScoring};
use crate::persona::{default_names, PersonaKind};
use crate::probing::WvsRangeConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaConfig {
    pub kind: PersonaKind,
    pub country: Option<String>,
    pub stats: Option<PathBuf>,
    pub codebook: Option<PathBuf>,
    pub names: BTreeMap<String, String>,
}

impl Default for PersonaConfig {
    fn default() -> Self {
        Self {
            kind: PersonaKind::None,
            country: None,
            stats: None,
            codebook: None,
            names: default_names(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Weights file for the built-in transformer; random init when absent.
    pub weights: Option<PathBuf>,
    /// Command line of an external model speaking the JSON-lines protocol.
    /// Takes precedence over `model`/`weights`.
    pub backend: Option<Vec<String>>,
    pub dataset: PathBuf,
    pub seed: u64,
    /// Fraction of each (question, domain) cell used for vector optimization.
    pub split_ratio: f64,
    pub temperature: f64,
    pub ppl_window: usize,
    pub ppl_alphas: Vec<f64>,
    /// How many evaluation scenario texts serve as perplexity prompts.
    pub ppl_prompts: usize,
    pub ppl_scoring: PerplexityScoring,
    pub axis: Axis,
    pub alpha: f64,
    pub alpha_cap: f64,
    pub top_k: usize,
    pub threshold: f64,
    pub persona: PersonaConfig,
    pub ranges: WvsRangeConfig,
    pub projection: ProjectionConfig,
    pub anchors: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            weights: None,
            backend: None,
            dataset: PathBuf::from("data/scenarios.json"),
            seed: 42,
            split_ratio: 0.5,
            temperature: 0.7,
            ppl_window: 128,
            ppl_alphas: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            ppl_prompts: 20,
            ppl_scoring: PerplexityScoring::SelfScored,
            axis: Axis::X,
            alpha: 0.2,
            alpha_cap: 0.4,
            top_k: 4,
            threshold: 0.25,
            persona: PersonaConfig::default(),
            ranges: WvsRangeConfig::default(),
            projection: ProjectionConfig::default(),
            anchors: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::InvalidRatio(self.split_ratio));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.ppl_window == 0 {
            return bad("ppl_window must be positive".into());
        }
        if self.top_k == 0 {
            return bad("top_k must be positive".into());
        }
        if !(self.alpha_cap >= 0.0) {
            return bad(format!("alpha_cap must be >= 0, got {}", self.alpha_cap));
        }
        self.ranges.check()
    }
}
