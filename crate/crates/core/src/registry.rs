//! Agent locator: a TTL-based directory of domain agents.
//!
//! Agents push their descriptor (directly, or with a `REGISTER` frame through
//! [`RegistryListener`]) and re-register to stay alive. An agent is available
//! while `now - last_seen <= ttl`.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::clock::Clock;
use crate::comm::{read_frame, write_frame, Message};
use crate::request::GENERAL_DOMAIN;

pub const DEFAULT_TTL_MS: u64 = 30_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegistryError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
}

/// Contact information and capabilities of one domain agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDescriptor {
    pub agent_id: String,
    pub domain: String,
    pub capabilities: BTreeSet<String>,
    pub endpoint: String,
    pub last_seen: u64,
}

impl AgentDescriptor {
    pub fn new(
        agent_id: impl Into<String>,
        domain: impl Into<String>,
        capabilities: impl IntoIterator<Item = impl Into<String>>,
        endpoint: impl Into<String>,
    ) -> Self {
        Self {
            agent_id: agent_id.into(),
            domain: domain.into(),
            capabilities: capabilities.into_iter().map(Into::into).collect(),
            endpoint: endpoint.into(),
            last_seen: 0,
        }
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |m: String| Err(RegistryError::InvalidDescriptor(m));
        if self.agent_id.trim().is_empty() {
            return invalid("empty agent_id".into());
        }
        if self.domain.trim().is_empty() {
            return invalid(format!("{}: empty domain", self.agent_id));
        }
        if self.capabilities.is_empty() {
            return invalid(format!("{}: no capabilities", self.agent_id));
        }
        if parse_endpoint(&self.endpoint).is_none() {
            return invalid(format!("{}: bad endpoint {:?}", self.agent_id, self.endpoint));
        }
        Ok(())
    }

    pub fn is_live(&self, now: u64, ttl_ms: u64) -> bool {
        now.saturating_sub(self.last_seen) <= ttl_ms
    }
}

/// Splits `host:port`, requiring a non-empty host and a 16-bit port.
pub fn parse_endpoint(endpoint: &str) -> Option<(&str, u16)> {
    let (host, port) = endpoint.rsplit_once(':')?;
    if host.is_empty() || host.chars().any(char::is_whitespace) {
        return None;
    }
    Some((host, port.parse().ok()?))
}

/// Thread-safe agent directory. Every operation takes the lock once, so
/// readers never see a partially applied update.
#[derive(Debug)]
pub struct AgentRegistry {
    ttl_ms: u64,
    entries: RwLock<BTreeMap<String, AgentDescriptor>>,
}

impl Default for AgentRegistry {
    fn default() -> Self {
        Self::new(DEFAULT_TTL_MS)
    }
}

impl AgentRegistry {
    pub fn new(ttl_ms: u64) -> Self {
        Self {
            ttl_ms,
            entries: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn ttl_ms(&self) -> u64 {
        self.ttl_ms
    }

    /// Upserts `descriptor` with `last_seen = now`.
    pub fn register(&self, mut descriptor: AgentDescriptor, now: u64) -> Result<(), RegistryError> {
        descriptor.validate()?;
        descriptor.last_seen = now;
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        entries.insert(descriptor.agent_id.clone(), descriptor);
        Ok(())
    }

    /// Removes `agent_id` if present. Unknown ids are a no-op.
    pub fn deregister(&self, agent_id: &str) {
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        entries.remove(agent_id);
    }

    /// Live agents of `domain` advertising all `required` capabilities,
    /// ordered by agent id. The `general` domain matches every live agent.
    pub fn locate(&self, domain: &str, required: &BTreeSet<String>, now: u64) -> Vec<AgentDescriptor> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries
            .values()
            .filter(|d| d.is_live(now, self.ttl_ms))
            .filter(|d| domain == GENERAL_DOMAIN || d.domain == domain)
            .filter(|d| required.is_subset(&d.capabilities))
            .cloned()
            .collect()
    }

    /// Drops every expired entry and returns how many were removed.
    pub fn prune_expired(&self, now: u64) -> usize {
        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        let before = entries.len();
        entries.retain(|_, d| d.is_live(now, self.ttl_ms));
        before - entries.len()
    }

    /// Every entry, live or not, ordered by agent id.
    pub fn snapshot(&self) -> Vec<AgentDescriptor> {
        let entries = self.entries.read().unwrap_or_else(|e| e.into_inner());
        entries.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Accepts `REGISTER` and `PING` frames so agents can self-register over the
/// wire. Runs until dropped.
pub struct RegistryListener {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl RegistryListener {
    pub async fn bind(
        addr: &str,
        registry: Arc<AgentRegistry>,
        clock: Arc<dyn Clock>,
        max_frame_bytes: usize,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            loop {
                let Ok((stream, peer)) = listener.accept().await else {
                    continue;
                };
                let registry = registry.clone();
                let clock = clock.clone();
                tokio::spawn(async move {
                    if let Err(e) = serve_registration(stream, &registry, &*clock, max_frame_bytes).await {
                        tracing::debug!(%peer, error = %e, "registry connection closed");
                    }
                });
            }
        });
        Ok(Self { local_addr, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

impl Drop for RegistryListener {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn serve_registration(
    mut stream: TcpStream,
    registry: &AgentRegistry,
    clock: &dyn Clock,
    max_frame_bytes: usize,
) -> Result<(), crate::comm::CodecError> {
    while let Some(msg) = read_frame(&mut stream, max_frame_bytes).await? {
        let reply = match msg {
            Message::Register { request_id, agent } => {
                let agent_id = agent.agent_id.clone();
                match registry.register(agent, clock.now_ms()) {
                    Ok(()) => {
                        tracing::info!(agent = %agent_id, "agent registered");
                        Message::Ack { request_id }
                    }
                    Err(e) => Message::Error {
                        request_id,
                        code: "invalid_descriptor".into(),
                        text: e.to_string(),
                    },
                }
            }
            Message::Ping { request_id } => Message::Pong { request_id },
            other => Message::Error {
                request_id: other.request_id().to_string(),
                code: "unsupported".into(),
                text: format!("registry does not handle {}", other.kind()),
            },
        };
        write_frame(&mut stream, &reply, max_frame_bytes).await?;
    }
    Ok(())
}
