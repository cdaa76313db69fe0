//! Broker configuration, read from a TOML file.
//!
//! Both flat dotted keys (`registry.ttl_ms = 30000`) and tables work:
//!
//! ```toml
//! [comm]
//! per_agent_timeout_ms = 2000
//! overall_deadline_ms = 5000
//! max_parallel = 8
//!
//! [[harness.agents]]
//! id = "hotels-east"
//! domain = "travel"
//! kb = "kb/hotels-east.tsv"
//! ```
//!
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::comm::CommSettings;
use crate::rank::RankWeights;
use crate::registry::DEFAULT_TTL_MS;
use crate::sim::DEFAULT_CAPABILITY;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoasConfig {
    pub rpu: RpuConfig,
    pub registry: RegistryConfig,
    pub comm: CommSettings,
    pub store: StoreConfig,
    pub rank: RankWeights,
    pub pa: PaConfig,
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RpuConfig {
    /// Replaces the built-in stopword list.
    pub stopwords_path: Option<PathBuf>,
    /// Replaces the built-in domain lexicon.
    pub lexicon_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistryConfig {
    pub ttl_ms: u64,
    /// Where the broker accepts REGISTER frames.
    pub listen: String,
    pub required_capabilities: BTreeSet<String>,
    /// Agents known up front, registered when the broker starts.
    pub agents: Vec<StaticAgent>,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            ttl_ms: DEFAULT_TTL_MS,
            listen: "127.0.0.1:0".into(),
            required_capabilities: BTreeSet::new(),
            agents: Vec::new(),
        }
    }
}

fn default_capabilities() -> BTreeSet<String> {
    [DEFAULT_CAPABILITY.to_string()].into()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticAgent {
    pub id: String,
    pub domain: String,
    pub endpoint: String,
    #[serde(default = "default_capabilities")]
    pub capabilities: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    /// Journal file; absent or empty keeps results in memory only.
    pub journal_path: Option<PathBuf>,
}

impl StoreConfig {
    pub fn journal(&self) -> Option<&Path> {
        self.journal_path.as_deref().filter(|p| !p.as_os_str().is_empty())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PaConfig {
    /// Fixed request-id prefix. Defaults to a token derived from start time.
    pub request_token: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    /// Sim agents started inside the broker process.
    pub agents: Vec<HarnessAgent>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarnessAgent {
    pub id: String,
    pub domain: String,
    pub kb: PathBuf,
    #[serde(default = "default_capabilities")]
    pub capabilities: BTreeSet<String>,
    /// `normal`, `drop` or `malformed`.
    #[serde(default = "default_behavior")]
    pub behavior: String,
    #[serde(default)]
    pub delay_ms: u64,
}

fn default_behavior() -> String {
    "normal".into()
}

impl SoasConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut config: SoasConfig = toml::from_str(text)?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        for p in [
            self.rpu.stopwords_path.as_mut(),
            self.rpu.lexicon_path.as_mut(),
            self.store.journal_path.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        for agent in &mut self.harness.agents {
            resolve(&mut agent.kb);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.rank.validate() {
            return invalid(e.to_string());
        }
        if let Err(e) = self.comm.validate() {
            return invalid(e.to_string());
        }
        if self.registry.ttl_ms == 0 {
            return invalid("registry.ttl_ms must be positive".into());
        }
        let mut ids = BTreeSet::new();
        let all_ids = self
            .registry
            .agents
            .iter()
            .map(|a| &a.id)
            .chain(self.harness.agents.iter().map(|a| &a.id));
        for id in all_ids {
            if !ids.insert(id) {
                return invalid(format!("duplicate agent id {id:?}"));
            }
        }
        for agent in &self.harness.agents {
            if !["normal", "drop", "malformed"].contains(&agent.behavior.as_str()) {
                return invalid(format!(
                    "harness agent {}: unknown behavior {:?}",
                    agent.id, agent.behavior
                ));
            }
        }
        Ok(())
    }
}
