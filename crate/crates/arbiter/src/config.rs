//! Run configuration: agents, templates, dataset spec, run matrix, retry
//! and rate-limit policy, seeds. One TOML document drives a whole run and
//! is snapshotted verbatim into the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, AgentId, AgentSpec, PromptTemplates, RetryPolicy};
use crate::core::BiasKind;
use crate::dataset::DatasetSpec;
use crate::report::DeltaThresholds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RateLimitConfig {
    /// Per-endpoint budget; absent means unlimited.
    pub requests_per_minute: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatrixConfig {
    /// Bias variants a run executes. The unmodified baseline is always run
    /// in addition, whether listed or not.
    pub biases: Vec<BiasKind>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig { biases: BiasKind::ALL_MODIFIED.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub agents: Vec<AgentSpec>,
    /// Agent used to materialize missing verbose variants.
    pub rewriter: Option<AgentId>,
    pub dataset: Option<DatasetSpec>,
    pub templates: PromptTemplates,
    pub retry: RetryPolicy,
    pub rate_limit: RateLimitConfig,
    pub matrix: MatrixConfig,
    pub delta_thresholds: DeltaThresholds,
    /// Annotation threshold for the stats battery.
    pub significance_level: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            agents: Vec::new(),
            rewriter: None,
            dataset: None,
            templates: PromptTemplates::default(),
            retry: RetryPolicy::default(),
            rate_limit: RateLimitConfig::default(),
            matrix: MatrixConfig::default(),
            delta_thresholds: DeltaThresholds::default(),
            significance_level: 0.05,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for agent in &self.agents {
            agent.validate()?;
            if !seen.insert(&agent.id) {
                return Err(ConfigError::Invalid(format!(
                    "duplicate agent id `{}`",
                    agent.id
                )));
            }
        }
        if let Some(rewriter) = &self.rewriter {
            if !seen.contains(rewriter) {
                return Err(ConfigError::Invalid(format!(
                    "rewriter `{rewriter}` is not a configured agent"
                )));
            }
        }
        if self.workers == 0 {
            return Err(ConfigError::Invalid("workers must be at least 1".into()));
        }
        self.retry.validate()?;
        if let Some(dataset) = &self.dataset {
            dataset
                .validate()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !(0.0..1.0).contains(&self.significance_level) {
            return Err(ConfigError::Invalid(
                "significance_level must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Biases to execute: the configured matrix plus the always-on baseline,
    /// deduplicated, in canonical order.
    pub fn run_biases(&self, overrides: &[BiasKind]) -> Vec<BiasKind> {
        let requested: &[BiasKind] = if overrides.is_empty() {
            &self.matrix.biases
        } else {
            overrides
        };
        let mut biases = vec![BiasKind::None];
        for kind in [
            BiasKind::Position,
            BiasKind::Verbosity,
            BiasKind::Bandwagon,
            BiasKind::Cot,
        ] {
            if requested.contains(&kind) {
                biases.push(kind);
            }
        }
        biases
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"
seed = 42

[[agents]]
id = "judge"
backend = "scripted"
model_name = "scripted-judge"

[[agents.script]]
reply = {{ kind = "scores", score1 = 8.0, score2 = 7.0 }}
"#
        )
        .unwrap();
        let config = RunConfig::load(f.path()).unwrap();
        assert_eq!(config.seed, 42);
        assert_eq!(config.workers, 1);
        assert_eq!(config.agents.len(), 1);
        assert_eq!(config.agents[0].temperature, 0.01);
        assert_eq!(config.retry.max_attempts, 3);
        assert_eq!(config.templates.score_min, 1);
    }

    #[test]
    fn remote_agent_config_parses() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"
[[agents]]
id = "gpt"
backend = "remote_chat"
endpoint = "https://example.test/v1/chat/completions"
model_name = "gpt-4o-mini"
temperature = 0.01
max_tokens = 512

[rate_limit]
requests_per_minute = 30
"#
        )
        .unwrap();
        let config = RunConfig::load(f.path()).unwrap();
        assert_eq!(config.rate_limit.requests_per_minute, Some(30));
        assert_eq!(config.agents[0].api_key_env().unwrap(), "ARBITER_KEY_GPT");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut config = RunConfig::default();
        config.agents.push(AgentSpec::scripted("a", vec![]));
        config.agents.push(AgentSpec::scripted("a", vec![]));
        assert!(config.validate().is_err());
    }

    #[test]
    fn unknown_rewriter_rejected() {
        let config = RunConfig { rewriter: Some("ghost".into()), ..RunConfig::default() };
        assert!(config.validate().is_err());
    }

    #[test]
    fn run_biases_always_include_baseline() {
        let config = RunConfig::default();
        let biases = config.run_biases(&[]);
        assert_eq!(biases[0], BiasKind::None);
        assert_eq!(biases.len(), 5);
        let only_position = config.run_biases(&[BiasKind::Position]);
        assert_eq!(only_position, vec![BiasKind::None, BiasKind::Position]);
        // Asking for the baseline alone still works.
        let none_only = config.run_biases(&[BiasKind::None]);
        assert_eq!(none_only, vec![BiasKind::None]);
    }

    #[test]
    fn config_round_trips_through_json() {
        // The manifest snapshots configs as JSON; they must survive.
        let mut config = RunConfig::default();
        config.agents.push(AgentSpec::scripted("a", vec![]));
        let json = serde_json::to_value(&config).unwrap();
        let back: RunConfig = serde_json::from_value(json).unwrap();
        assert_eq!(config, back);
    }
}
