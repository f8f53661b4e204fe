//! File-backed run configuration. Every section is optional; flags given on
//! the command line are applied on top.

use std::fs;
use std::path::{Path, PathBuf};

use rebut_core::datagen::DatagenOptions;
use rebut_core::ingest::FieldMap;
use rebut_core::llm::ChatSettings;
use rebut_core::model::VeracityLabel;
use rebut_core::orchestrator::GenerationConfig;
use serde::{Deserialize, Serialize};

/// Environment variable holding the API key for LLM endpoints.
pub const API_KEY_VAR: &str = "REBUT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Upper bound on concurrent articles for batch subcommands.
    pub parallelism: usize,
    /// External entity tagger; the built-in heuristic is used without one.
    pub tagger_endpoint: Option<String>,
    /// Directory with replacement prompt templates.
    pub prompts_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub generation: GenerationConfig,
    pub datagen: DatagenConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            parallelism: 4,
            tagger_endpoint: None,
            prompts_dir: None,
            data: DataConfig::default(),
            generation: GenerationConfig::default(),
            datagen: DatagenConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// When set, every claim is paired with this one evidence document.
    pub evidence_file: Option<PathBuf>,
    /// Keep only these labels. Empty keeps everything.
    pub labels: Vec<VeracityLabel>,
    pub split: [f64; 3],
    pub fields: FieldMap,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { evidence_file: None, labels: Vec::new(), split: [0.8, 0.1, 0.1], fields: FieldMap::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub number_cap: usize,
    pub entity_cap: usize,
    pub offtopic_count: usize,
    pub offtopic_retries: usize,
    /// Chat endpoint for off-topic rewrites; without it only number and
    /// entity instances are produced.
    pub offtopic_llm: Option<ChatSettings>,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        let o = DatagenOptions::default();
        Self {
            number_cap: o.number_cap,
            entity_cap: o.entity_cap,
            offtopic_count: o.offtopic_count,
            offtopic_retries: o.offtopic_retries,
            offtopic_llm: None,
        }
    }
}

impl DatagenConfig {
    pub fn options(&self) -> DatagenOptions {
        DatagenOptions {
            number_cap: self.number_cap,
            entity_cap: self.entity_cap,
            offtopic_count: self.offtopic_count,
            offtopic_retries: self.offtopic_retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub judge: Option<ChatSettings>,
    pub gamma: f64,
    pub retries: usize,
    pub templates_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { judge: None, gamma: rebut_core::eval::DEFAULT_GAMMA, retries: rebut_core::eval::DEFAULT_JUDGE_RETRIES, templates_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub items: usize,
    /// Per-item latency of the simulated critique model.
    pub critic_latency_ms: f64,
    /// Per-item latency of the simulated self-feedback baseline.
    pub baseline_latency_ms: f64,
    /// Chat endpoint for a measured self-feedback baseline.
    pub baseline_llm: Option<ChatSettings>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            items: 100,
            critic_latency_ms: 1000.0 / 0.925,
            baseline_latency_ms: 1000.0 / 0.165,
            baseline_llm: None,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.parallelism == 0 {
            return Err(ConfigError("parallelism must be at least 1".into()));
        }
        self.generation.validate().map_err(|e| ConfigError(format!("generation: {e}")))?;
        let [a, b, c] = self.data.split;
        rebut_core::ingest::split_sizes(0, (a, b, c)).map_err(|e| ConfigError(format!("data.split: {e}")))?;
        if self.bench.items == 0 {
            return Err(ConfigError("bench.items must be at least 1".into()));
        }
        if !(self.bench.critic_latency_ms > 0.0 && self.bench.baseline_latency_ms > 0.0) {
            return Err(ConfigError("bench latencies must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable as TOML")
    }
}
