//! Campaign configuration files.
//!
//! A campaign config is a TOML document:
//!
//! ```toml
//! campaign_seed = 42
//! store = "runs/store.jsonl"
//! topics = ["healthcare", "abortion"]
//! poles = ["liberal", "conservative"]
//! sims_per_cell = 50
//! n_agents = 2
//! m_values = [20]
//! parallelism = 4        # optional, default 4
//! vote_count = 10        # optional
//! repetitions = 10       # optional, one-shot probes
//! corpus = "my.toml"     # optional, bundled corpus otherwise
//! raw_log_dir = "raw"    # optional request/response sidecars
//!
//! [social_backend]
//! kind = "openai"        # or "stance_mock" / "scripted"
//! id = "primary"
//! endpoint = "https://api.openai.com/v1"
//! model_id = "gpt-4o"
//! requests_per_minute = 60
//!
//! [classifier_backend]
//! kind = "stance_mock"
//! flip_probability = 0.0
//! flip_target = "strongly_liberal"
//! ```
//!
//! Credentials never appear in config files; HTTP backends read
//! `ECHOAUDIT_API_KEY` (or `ECHOAUDIT_API_KEY_<ID>`) from the environment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backend::{
    api_key_from_env, Backend, BackendError, HttpBackend, HttpBackendConfig, RateLimit,
    RetryPolicy, ScriptedBackend, StanceMockBackend,
};
use crate::campaign::{derive_seed, BackendProvider};
use crate::chatroom::SimulationConfig;
use crate::corpus::{Corpus, Topic};
use crate::level::{OpinionLevel, Pole};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("failed to read config file `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// One backend slot in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    /// OpenAI-compatible chat-completions endpoint.
    Openai {
        #[serde(default = "default_backend_id")]
        id: String,
        endpoint: String,
        model_id: String,
        #[serde(default)]
        requests_per_minute: Option<u32>,
        #[serde(default = "default_max_retries")]
        max_retries: u32,
        #[serde(default = "default_base_delay_ms")]
        base_delay_ms: u64,
        #[serde(default = "default_request_timeout_secs")]
        request_timeout_secs: u64,
    },
    /// Deterministic analytic mock (fresh instance per simulation).
    StanceMock {
        flip_probability: f64,
        flip_target: OpinionLevel,
        #[serde(default = "default_stance_mock_model")]
        model_id: String,
    },
    /// Canned completions (fresh instance per simulation).
    Scripted {
        script: Vec<String>,
        #[serde(default)]
        cycle: bool,
        #[serde(default = "default_scripted_model")]
        model_id: String,
    },
}

fn default_backend_id() -> String {
    "default".to_string()
}
fn default_max_retries() -> u32 {
    5
}
fn default_base_delay_ms() -> u64 {
    1000
}
fn default_request_timeout_secs() -> u64 {
    60
}
fn default_stance_mock_model() -> String {
    "stance-mock".to_string()
}
fn default_scripted_model() -> String {
    "scripted".to_string()
}

impl BackendSpec {
    pub fn model_id(&self) -> &str {
        match self {
            BackendSpec::Openai { model_id, .. }
            | BackendSpec::StanceMock { model_id, .. }
            | BackendSpec::Scripted { model_id, .. } => model_id,
        }
    }

    pub fn is_mock(&self) -> bool {
        !matches!(self, BackendSpec::Openai { .. })
    }

    fn validate(&self, slot: &str) -> Result<(), ConfigError> {
        match self {
            BackendSpec::Openai {
                endpoint, model_id, ..
            } => {
                if endpoint.is_empty() {
                    return Err(ConfigError::Invalid(format!("{slot}: endpoint is empty")));
                }
                if model_id.is_empty() {
                    return Err(ConfigError::Invalid(format!("{slot}: model_id is empty")));
                }
            }
            BackendSpec::StanceMock {
                flip_probability, ..
            } => {
                if !(0.0..=1.0).contains(flip_probability) {
                    return Err(ConfigError::Invalid(format!(
                        "{slot}: flip_probability {flip_probability} outside [0, 1]"
                    )));
                }
            }
            BackendSpec::Scripted { .. } => {}
        }
        Ok(())
    }

    fn build_http(&self) -> Option<Arc<dyn Backend>> {
        match self {
            BackendSpec::Openai {
                id,
                endpoint,
                requests_per_minute,
                max_retries,
                base_delay_ms,
                request_timeout_secs,
                ..
            } => {
                let mut config = HttpBackendConfig::new(id.clone(), endpoint.clone());
                config.retry = RetryPolicy {
                    max_attempts: *max_retries,
                    base_delay: std::time::Duration::from_millis(*base_delay_ms),
                    factor: 2.0,
                    jitter: true,
                };
                config.rate_limit = requests_per_minute.map(RateLimit::per_minute);
                config.request_timeout = std::time::Duration::from_secs(*request_timeout_secs);
                Some(Arc::new(HttpBackend::new(config)))
            }
            _ => None,
        }
    }

    /// Instantiates the backend for one simulation. `shared` carries the
    /// process-wide HTTP client when the spec is remote.
    fn instantiate(
        &self,
        shared: Option<&Arc<dyn Backend>>,
        role: &str,
        sim: &SimulationConfig,
        topic: &Topic,
    ) -> Result<Arc<dyn Backend>, BackendError> {
        match self {
            BackendSpec::Openai { .. } => Ok(Arc::clone(
                shared.expect("http backends are pre-built per campaign"),
            )),
            BackendSpec::StanceMock {
                flip_probability,
                flip_target,
                ..
            } => {
                let seed = derive_seed(sim.seed, &format!("backend:{role}"), 0);
                let mut mock = StanceMockBackend::new(topic, *flip_probability, *flip_target, seed);
                if role == "social" {
                    mock = mock.with_public_budget(u64::from(sim.n_messages));
                }
                Ok(Arc::new(mock))
            }
            BackendSpec::Scripted { script, cycle, .. } => {
                let backend = if *cycle {
                    ScriptedBackend::cycling(script.clone())
                } else {
                    ScriptedBackend::new(script.clone())
                };
                Ok(Arc::new(backend))
            }
        }
    }
}

fn default_parallelism() -> usize {
    4
}
fn default_vote_count() -> u32 {
    10
}
fn default_repetitions() -> u32 {
    10
}
fn default_n_agents() -> u32 {
    2
}
fn default_true() -> bool {
    true
}
fn default_reinject_last_k() -> usize {
    1
}
fn default_window_budget() -> usize {
    2048
}
fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    120
}

/// A parsed campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign_seed: u64,
    pub store: PathBuf,
    pub topics: Vec<String>,
    pub poles: Vec<Pole>,
    pub sims_per_cell: u32,
    #[serde(default = "default_n_agents")]
    pub n_agents: u32,
    pub m_values: Vec<u32>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_vote_count")]
    pub vote_count: u32,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub raw_log_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub reinject: bool,
    #[serde(default = "default_reinject_last_k")]
    pub reinject_last_k: usize,
    #[serde(default = "default_window_budget")]
    pub window_budget: usize,
    #[serde(default = "default_temperature")]
    pub social_temperature: f64,
    #[serde(default = "default_temperature")]
    pub classifier_temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    pub social_backend: BackendSpec,
    pub classifier_backend: BackendSpec,
}

impl CampaignConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<CampaignConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: CampaignConfig = toml::from_str(&text)?;
        Ok(config)
    }

    /// Checks cross-field invariants against the corpus the campaign will
    /// run on. Fails with the first violation.
    pub fn validate(&self, corpus: &Corpus) -> Result<(), ConfigError> {
        for topic in &self.topics {
            if corpus.topic(topic).is_none() {
                return Err(ConfigError::Invalid(format!("unknown topic `{topic}`")));
            }
        }
        if self.topics.is_empty() {
            return Err(ConfigError::Invalid("topics list is empty".to_string()));
        }
        if self.poles.is_empty() {
            return Err(ConfigError::Invalid("poles list is empty".to_string()));
        }
        if self.m_values.is_empty() {
            return Err(ConfigError::Invalid("m_values list is empty".to_string()));
        }
        if self.m_values.iter().any(|&m| m < 1) {
            return Err(ConfigError::Invalid(
                "m_values must be at least 1".to_string(),
            ));
        }
        if self.sims_per_cell < 1 {
            return Err(ConfigError::Invalid(
                "sims_per_cell must be at least 1".to_string(),
            ));
        }
        if self.n_agents < 2 {
            return Err(ConfigError::Invalid(
                "n_agents must be at least 2".to_string(),
            ));
        }
        if self.vote_count < 1 {
            return Err(ConfigError::Invalid(
                "vote_count must be at least 1".to_string(),
            ));
        }
        if self.parallelism < 1 {
            return Err(ConfigError::Invalid(
                "parallelism must be at least 1".to_string(),
            ));
        }
        self.social_backend.validate("social_backend")?;
        self.classifier_backend.validate("classifier_backend")?;
        Ok(())
    }

    /// The full ordered job list: topics x poles x m_values x replicates.
    pub fn jobs(&self) -> Vec<SimulationConfig> {
        let mut jobs = Vec::new();
        for topic in &self.topics {
            for pole in &self.poles {
                for m in &self.m_values {
                    for replicate in 0..self.sims_per_cell {
                        let cell = format!("{topic}|{pole}|m{m}");
                        jobs.push(SimulationConfig {
                            topic_id: topic.clone(),
                            n_agents: self.n_agents,
                            n_messages: *m,
                            initial_pole: *pole,
                            seed: derive_seed(self.campaign_seed, &cell, replicate),
                            model_id: self.social_backend.model_id().to_string(),
                            classifier_model_id: self.classifier_backend.model_id().to_string(),
                            vote_count: self.vote_count,
                            reinject: self.reinject,
                            reinject_last_k: self.reinject_last_k,
                            window_budget: self.window_budget,
                            social_temperature: self.social_temperature,
                            classifier_temperature: self.classifier_temperature,
                            max_tokens: self.max_tokens,
                            cell,
                            replicate,
                        });
                    }
                }
            }
        }
        jobs
    }

    /// Builds the per-campaign backend provider.
    pub fn provider(&self) -> ConfiguredProvider {
        ConfiguredProvider {
            social: self.social_backend.clone(),
            classifier: self.classifier_backend.clone(),
            shared_social: self.social_backend.build_http(),
            shared_classifier: self.classifier_backend.build_http(),
        }
    }

    /// Secrets that must never appear in outputs: every API key reachable
    /// through the environment.
    pub fn secrets() -> Vec<String> {
        std::env::vars()
            .filter(|(name, value)| name.starts_with("ECHOAUDIT_API_KEY") && !value.is_empty())
            .map(|(_, value)| value)
            .collect()
    }

    /// The API keys the configured backends would use, for scrub checks.
    pub fn backend_secrets(&self) -> Vec<String> {
        let mut secrets = Vec::new();
        for spec in [&self.social_backend, &self.classifier_backend] {
            if let BackendSpec::Openai { id, .. } = spec {
                if let Some(key) = api_key_from_env(id) {
                    secrets.push(key);
                }
            }
        }
        secrets.extend(Self::secrets());
        secrets.sort();
        secrets.dedup();
        secrets
    }
}

impl BackendSpec {
    /// One backend instance shared by every probe of a one-shot run.
    /// Probes are stateless, so mocks do not need per-cell instances.
    pub fn probe_backend(
        &self,
        campaign_seed: u64,
        corpus: &Corpus,
        first_topic: &str,
    ) -> Result<Arc<dyn Backend>, String> {
        match self {
            BackendSpec::Openai { .. } => self
                .build_http()
                .ok_or_else(|| "http backend construction failed".to_string()),
            BackendSpec::StanceMock {
                flip_probability,
                flip_target,
                ..
            } => {
                let topic = corpus
                    .topic(first_topic)
                    .ok_or_else(|| format!("unknown topic `{first_topic}`"))?;
                Ok(Arc::new(StanceMockBackend::new(
                    topic,
                    *flip_probability,
                    *flip_target,
                    derive_seed(campaign_seed, "oneshot", 0),
                )))
            }
            BackendSpec::Scripted { script, cycle, .. } => {
                let backend = if *cycle {
                    ScriptedBackend::cycling(script.clone())
                } else {
                    ScriptedBackend::new(script.clone())
                };
                Ok(Arc::new(backend))
            }
        }
    }
}

/// [`BackendProvider`] backed by the config's two backend slots.
pub struct ConfiguredProvider {
    social: BackendSpec,
    classifier: BackendSpec,
    shared_social: Option<Arc<dyn Backend>>,
    shared_classifier: Option<Arc<dyn Backend>>,
}

impl BackendProvider for ConfiguredProvider {
    fn social(
        &self,
        config: &SimulationConfig,
        topic: &Topic,
    ) -> Result<Arc<dyn Backend>, BackendError> {
        self.social
            .instantiate(self.shared_social.as_ref(), "social", config, topic)
    }

    fn classifier(
        &self,
        config: &SimulationConfig,
        topic: &Topic,
    ) -> Result<Arc<dyn Backend>, BackendError> {
        self.classifier
            .instantiate(self.shared_classifier.as_ref(), "classifier", config, topic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOCK_CONFIG: &str = r#"
campaign_seed = 42
store = "out/store.jsonl"
topics = ["healthcare", "abortion"]
poles = ["liberal", "conservative"]
sims_per_cell = 3
m_values = [5, 20]

[social_backend]
kind = "stance_mock"
flip_probability = 0.05
flip_target = "strongly_liberal"

[classifier_backend]
kind = "stance_mock"
flip_probability = 0.0
flip_target = "strongly_liberal"
"#;

    #[test]
    fn mock_config_parses_with_defaults() {
        let config: CampaignConfig = toml::from_str(MOCK_CONFIG).unwrap();
        assert_eq!(config.campaign_seed, 42);
        assert_eq!(config.n_agents, 2);
        assert_eq!(config.vote_count, 10);
        assert_eq!(config.parallelism, 4);
        assert!(config.reinject);
        assert_eq!(config.social_backend.model_id(), "stance-mock");
        config.validate(&Corpus::bundled()).unwrap();
    }

    #[test]
    fn jobs_cover_the_full_cross_product_in_order() {
        let config: CampaignConfig = toml::from_str(MOCK_CONFIG).unwrap();
        let jobs = config.jobs();
        // 2 topics x 2 poles x 2 m values x 3 replicates
        assert_eq!(jobs.len(), 24);
        assert_eq!(jobs[0].cell, "healthcare|liberal|m5");
        assert_eq!(jobs[0].replicate, 0);
        assert_eq!(jobs[23].cell, "abortion|conservative|m20");
        assert_eq!(jobs[23].replicate, 2);
        // Seeds are distinct across jobs.
        let seeds: std::collections::HashSet<u64> = jobs.iter().map(|j| j.seed).collect();
        assert_eq!(seeds.len(), jobs.len());
    }

    #[test]
    fn unknown_topics_are_rejected_by_name() {
        let mut config: CampaignConfig = toml::from_str(MOCK_CONFIG).unwrap();
        config.topics.push("flat_earth".to_string());
        let err = config.validate(&Corpus::bundled()).unwrap_err();
        assert!(err.to_string().contains("flat_earth"));
    }

    #[test]
    fn bad_flip_probability_is_rejected() {
        let mut config: CampaignConfig = toml::from_str(MOCK_CONFIG).unwrap();
        config.social_backend = BackendSpec::StanceMock {
            flip_probability: 1.5,
            flip_target: OpinionLevel::Neutral,
            model_id: "m".to_string(),
        };
        assert!(config.validate(&Corpus::bundled()).is_err());
    }

    #[test]
    fn openai_spec_parses() {
        let text = r#"
campaign_seed = 1
store = "s.jsonl"
topics = ["healthcare"]
poles = ["conservative"]
sims_per_cell = 1
m_values = [5]

[social_backend]
kind = "openai"
id = "primary"
endpoint = "http://localhost:8000/v1"
model_id = "llama"
requests_per_minute = 30

[classifier_backend]
kind = "openai"
endpoint = "http://localhost:8000/v1"
model_id = "llama-big"
"#;
        let config: CampaignConfig = toml::from_str(text).unwrap();
        config.validate(&Corpus::bundled()).unwrap();
        assert_eq!(config.social_backend.model_id(), "llama");
        assert!(!config.social_backend.is_mock());
    }

    #[test]
    fn scripted_spec_round_trips() {
        let spec = BackendSpec::Scripted {
            script: vec!["Strongly agree".to_string()],
            cycle: true,
            model_id: "scripted".to_string(),
        };
        let text = toml::to_string(&spec).unwrap();
        let back: BackendSpec = toml::from_str(&text).unwrap();
        assert_eq!(spec, back);
    }
}
