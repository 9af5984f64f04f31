//! Tool configuration loaded from TOML.
//!
//! Secrets are never stored in the file. Provider sections name the
//! environment variable holding the API key, and the variable is read only
//! when a subcommand constructs that provider.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::GenerationParams;
use crate::providers::http::HttpTransport;
use crate::providers::{
    EmbeddingProvider, FixtureMode, HashEmbedder, HttpChatClient, HttpClient, HttpEmbedClient,
    HttpEndpoint, LlmClient, OfflineLlm, RetryPolicy, UreqTransport,
};
use crate::reward::RewardOptions;

pub const EMBED_KEY_ENV: &str = "RARFT_EMBED_API_KEY";
pub const LLM_KEY_ENV: &str = "RARFT_LLM_API_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("environment variable {0} is not set")]
    MissingKey(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub kind: EmbedderKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: String,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            endpoint: None,
            model: None,
            api_key_env: EMBED_KEY_ENV.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmKind {
    /// Deterministic rule-based responder.
    #[default]
    #[serde(alias = "mock")]
    Offline,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmConfig {
    pub kind: LlmKind,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Retries after the first attempt, for transport errors and 5xx only.
    pub max_retries: u32,
    pub generation_temperature: f64,
    pub classification_temperature: f64,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let params = GenerationParams::default();
        Self {
            kind: LlmKind::Offline,
            endpoint: None,
            model: None,
            api_key_env: LLM_KEY_ENV.to_string(),
            timeout_secs: 60,
            max_retries: 2,
            generation_temperature: params.generation_temperature,
            classification_temperature: params.classification_temperature,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConcurrencyConfig {
    /// Concurrent provider requests.
    pub max_in_flight: usize,
    /// Worker threads for scoring and evaluation; 0 picks the core count.
    pub threads: usize,
}

impl Default for ConcurrencyConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 8,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FixtureSetting {
    #[default]
    Off,
    Record,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToolConfig {
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
    pub concurrency: ConcurrencyConfig,
    pub strict_format_gating: bool,
    pub fixture_dir: Option<PathBuf>,
    pub fixture_mode: FixtureSetting,
    pub seed: Option<u64>,
}

impl ToolConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ToolConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, or returns the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.concurrency.max_in_flight == 0 {
            return Err(ConfigError::Invalid("concurrency.max_in_flight must be at least 1".into()));
        }
        if self.fixture_mode != FixtureSetting::Off && self.fixture_dir.is_none() {
            return Err(ConfigError::Invalid("fixture_mode needs fixture_dir".into()));
        }
        Ok(())
    }

    pub fn reward_options(&self) -> RewardOptions {
        RewardOptions {
            strict_format_gating: self.strict_format_gating,
        }
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            generation_temperature: self.llm.generation_temperature,
            classification_temperature: self.llm.classification_temperature,
        }
    }

    pub fn fixtures(&self) -> FixtureMode {
        match (self.fixture_mode, &self.fixture_dir) {
            (FixtureSetting::Record, Some(d)) => FixtureMode::Record(d.clone()),
            (FixtureSetting::Replay, Some(d)) => FixtureMode::Replay(d.clone()),
            _ => FixtureMode::Off,
        }
    }

    /// Replay never reaches the network, so it runs without keys.
    fn api_key(&self, var: &str) -> Result<Option<String>, ConfigError> {
        match std::env::var(var) {
            Ok(k) if !k.is_empty() => Ok(Some(k)),
            _ if matches!(self.fixtures(), FixtureMode::Replay(_)) => Ok(None),
            _ => Err(ConfigError::MissingKey(var.to_string())),
        }
    }

    fn http_client(&self, transport: Arc<dyn HttpTransport>) -> HttpClient {
        HttpClient::new(transport, self.concurrency.max_in_flight)
            .with_retry(RetryPolicy {
                max_attempts: self.llm.max_retries + 1,
                ..RetryPolicy::default()
            })
            .with_fixtures(self.fixtures())
    }

    fn default_transport(&self) -> Arc<dyn HttpTransport> {
        Arc::new(UreqTransport::new(Duration::from_secs(self.llm.timeout_secs)))
    }

    pub fn build_embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        self.build_embedder_with(self.default_transport())
    }

    pub fn build_embedder_with(
        &self,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Arc<dyn EmbeddingProvider>, ConfigError> {
        let e = &self.embedder;
        match e.kind {
            EmbedderKind::Hash => Ok(Arc::new(HashEmbedder::new())),
            EmbedderKind::Http => {
                let (url, model) = required_endpoint("embedder", &e.endpoint, &e.model)?;
                let endpoint = HttpEndpoint::new(url, self.api_key(&e.api_key_env)?);
                Ok(Arc::new(HttpEmbedClient::new(endpoint, model, self.http_client(transport))))
            }
        }
    }

    pub fn build_llm(&self) -> Result<Arc<dyn LlmClient>, ConfigError> {
        self.build_llm_with(self.default_transport())
    }

    pub fn build_llm_with(&self, transport: Arc<dyn HttpTransport>) -> Result<Arc<dyn LlmClient>, ConfigError> {
        let l = &self.llm;
        match l.kind {
            LlmKind::Offline => Ok(Arc::new(OfflineLlm::new())),
            LlmKind::Http => {
                let (url, model) = required_endpoint("llm", &l.endpoint, &l.model)?;
                let endpoint = HttpEndpoint::new(url, self.api_key(&l.api_key_env)?);
                Ok(Arc::new(HttpChatClient::new(endpoint, model, self.http_client(transport))))
            }
        }
    }
}

fn required_endpoint(
    section: &str,
    endpoint: &Option<String>,
    model: &Option<String>,
) -> Result<(String, String), ConfigError> {
    let url = endpoint
        .clone()
        .ok_or_else(|| ConfigError::Invalid(format!("{section}.endpoint is required for kind = \"http\"")))?;
    let model = model
        .clone()
        .ok_or_else(|| ConfigError::Invalid(format!("{section}.model is required for kind = \"http\"")))?;
    Ok((url, model))
}
