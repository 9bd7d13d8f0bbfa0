//! Declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    ClusteringParams, SimilarityTarget, DEFAULT_LENGTH_THRESHOLD, DEFAULT_MAX_DOCUMENTS,
    DEFAULT_SIMILARITY_CUTOFF,
};
use crate::cluster::embed::DEFAULT_HASH_DIM;
use crate::pack::DEFAULT_GENERAL_TOKEN_FRACTION;
use crate::qagen::{Backoff, ChatClientConfig, PromptTemplate, DEFAULT_MODEL, MOCK_ENDPOINT};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("config schema: {0}")]
    Schema(String),
    #[error("config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaMethod {
    Llm,
    Regex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub corpus: PathBuf,
    pub domain: String,
    #[serde(default)]
    pub instructions: Vec<PathBuf>,
}

fn default_concurrency() -> usize {
    4
}
fn default_retry_limit() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_model() -> String {
    DEFAULT_MODEL.to_string()
}
fn default_endpoint() -> String {
    MOCK_ENDPOINT.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaConfig {
    pub method: QaMethod,
    #[serde(default = "default_endpoint")]
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// Forwarded to providers that accept a sampling seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub template: Option<String>,
    /// Rule spec file for the regex method; the built-in rule alone when absent.
    #[serde(default)]
    pub rules: Option<PathBuf>,
}

impl QaConfig {
    pub fn client(&self) -> ChatClientConfig {
        ChatClientConfig {
            endpoint: self.endpoint.clone(),
            model_name: self.model.clone(),
            max_concurrency: self.concurrency,
            retry_limit: self.retry_limit,
            backoff: Backoff {
                initial_ms: self.backoff_ms,
                factor: 2.0,
                max_ms: self.backoff_ms.saturating_mul(64),
            },
        }
    }

    pub fn template(&self) -> Result<PromptTemplate, ConfigError> {
        match &self.template {
            None => Ok(PromptTemplate::default()),
            Some(body) => PromptTemplate::new(body.clone())
                .map_err(|e| ConfigError::Invalid(format!("qa.template: {e}"))),
        }
    }
}

fn default_lmax() -> usize {
    DEFAULT_LENGTH_THRESHOLD
}
fn default_dmax() -> usize {
    DEFAULT_MAX_DOCUMENTS
}
fn default_tau() -> f64 {
    DEFAULT_SIMILARITY_CUTOFF
}
fn default_embedder() -> String {
    "hash".to_string()
}
fn default_dim() -> usize {
    DEFAULT_HASH_DIM
}
fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(default = "default_lmax")]
    pub lmax: usize,
    #[serde(default = "default_dmax")]
    pub dmax: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub target: SimilarityTarget,
    /// `hash` for the offline embedder, otherwise an embeddings endpoint URL.
    #[serde(default = "default_embedder")]
    pub embedder: String,
    #[serde(default)]
    pub embedding_model: Option<String>,
    #[serde(default = "default_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
}

impl ClusterConfig {
    pub fn params(&self) -> ClusteringParams {
        ClusteringParams {
            length_threshold: self.lmax,
            max_documents: self.dmax,
            similarity_cutoff: self.tau,
            seed: self.seed,
            target: self.target,
        }
    }
}

impl Default for ClusterConfig {
    fn default() -> Self {
        toml::from_str("").expect("all cluster fields have defaults")
    }
}

fn default_fraction() -> f64 {
    DEFAULT_GENERAL_TOKEN_FRACTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PackConfig {
    pub capacity: usize,
    #[serde(default = "default_fraction")]
    pub general_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub split_oversize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub store: PathBuf,
    pub training_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub qa: QaConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    pub pack: PackConfig,
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Schema(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.ingest.domain.trim().is_empty() {
            return bad("ingest.domain must be non-empty".into());
        }
        if self.qa.concurrency == 0 {
            return bad("qa.concurrency must be at least 1".into());
        }
        self.qa.template()?;
        self.cluster
            .params()
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("cluster: {e}")))?;
        if self.cluster.embedding_dim == 0 {
            return bad("cluster.embedding_dim must be positive".into());
        }
        if self.pack.capacity == 0 {
            return bad("pack.capacity must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.pack.general_fraction) {
            return bad(format!(
                "pack.general_fraction {} must be in [0, 1)",
                self.pack.general_fraction
            ));
        }
        Ok(())
    }

    /// Resolves relative paths against `base` (the config file's directory).
    pub fn resolve(&self, base: &Path, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            base.join(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[ingest]
corpus = "docs.jsonl"
domain = "biomedicine"

[qa]
method = "regex"

[pack]
capacity = 512

[output]
store = "store"
training_file = "train.jsonl"
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = PipelineConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.cluster.tau, 0.7);
        assert_eq!(cfg.cluster.dmax, 16);
        assert_eq!(cfg.pack.general_fraction, 0.2);
        assert_eq!(cfg.qa.model, "gpt-3.5-turbo");
        assert_eq!(cfg.qa.template().unwrap(), PromptTemplate::default());
    }

    #[test]
    fn missing_capacity_names_field() {
        let text = MINIMAL.replace("capacity = 512", "");
        let err = PipelineConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Schema(_)));
        assert!(err.to_string().contains("capacity"), "{err}");
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        let text = MINIMAL.replace("capacity = 512", "capacity = 512\ncapacty = 1");
        assert!(PipelineConfig::from_toml_str(&text).unwrap_err().to_string().contains("capacty"));
        let text = MINIMAL.replace("capacity = 512", "capacity = 0");
        assert!(matches!(PipelineConfig::from_toml_str(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replace("method = \"regex\"", "method = \"regex\"\ntemplate = \"{DOCUMENT}\"");
        assert!(matches!(PipelineConfig::from_toml_str(&text), Err(ConfigError::Invalid(_))));
    }
}
