//! Assembles a running broker (registry, wire listener, store, personal
//! agent and any in-process harness agents) from a [`SoasConfig`].

use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::config::{HarnessAgent, SoasConfig};
use crate::personal::{PersonalAgent, RequestIds};
use crate::registry::{AgentDescriptor, AgentRegistry, RegistryError, RegistryListener};
use crate::request::{default_lexicon, default_stopwords, load_lexicon, load_stopwords, ResourceError};
use crate::sim::{load_knowledge_base, serve, AgentSpec, Behavior, KbError, RunningAgent, ServeError, ServeOptions};
use crate::store::{ResultStore, StoreError};

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("cannot load request-processing resources: {0}")]
    Resource(#[from] ResourceError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot start registry listener on {addr}: {source}")]
    Listen {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("static agent: {0}")]
    StaticAgent(#[from] RegistryError),
    #[error("harness agent {id}: {source}")]
    HarnessKb {
        id: String,
        #[source]
        source: KbError,
    },
    #[error("harness agent {id}: {source}")]
    HarnessServe {
        id: String,
        #[source]
        source: ServeError,
    },
}

pub struct Broker {
    agent: PersonalAgent,
    listener: RegistryListener,
    harness: Vec<RunningAgent>,
}

fn behavior_of(agent: &HarnessAgent) -> Behavior {
    match agent.behavior.as_str() {
        "drop" => Behavior::DropConnection,
        "malformed" => Behavior::MalformedReply,
        _ if agent.delay_ms > 0 => Behavior::Delay(Duration::from_millis(agent.delay_ms)),
        _ => Behavior::Normal,
    }
}

impl Broker {
    pub async fn start(config: &SoasConfig) -> Result<Self, BrokerError> {
        Self::start_with_clock(config, Arc::new(SystemClock)).await
    }

    pub async fn start_with_clock(config: &SoasConfig, clock: Arc<dyn Clock>) -> Result<Self, BrokerError> {
        let stopwords = match &config.rpu.stopwords_path {
            Some(p) => load_stopwords(p)?,
            None => default_stopwords(),
        };
        let lexicon = match &config.rpu.lexicon_path {
            Some(p) => load_lexicon(p)?,
            None => default_lexicon(),
        };
        let store = Arc::new(match config.store.journal() {
            Some(path) => ResultStore::open(path)?,
            None => ResultStore::in_memory(),
        });
        let registry = Arc::new(AgentRegistry::new(config.registry.ttl_ms));

        let listener = RegistryListener::bind(
            &config.registry.listen,
            registry.clone(),
            clock.clone(),
            config.comm.max_frame_bytes,
        )
        .await
        .map_err(|source| BrokerError::Listen {
            addr: config.registry.listen.clone(),
            source,
        })?;
        let registry_addr = listener.local_addr().to_string();

        for a in &config.registry.agents {
            let descriptor = AgentDescriptor::new(&a.id, &a.domain, a.capabilities.iter().cloned(), &a.endpoint);
            registry.register(descriptor, clock.now_ms())?;
        }

        let mut harness = Vec::with_capacity(config.harness.agents.len());
        for a in &config.harness.agents {
            let kb = load_knowledge_base(&a.kb).map_err(|source| BrokerError::HarnessKb {
                id: a.id.clone(),
                source,
            })?;
            let spec = AgentSpec {
                agent_id: a.id.clone(),
                domain: a.domain.clone(),
                capabilities: a.capabilities.clone(),
            };
            let options = ServeOptions {
                behavior: behavior_of(a),
                registration_timeout_ms: config.comm.per_agent_timeout_ms,
                ..Default::default()
            };
            let running = serve(Arc::new(kb), "127.0.0.1:0", Some(&registry_addr), spec, options)
                .await
                .map_err(|source| BrokerError::HarnessServe {
                    id: a.id.clone(),
                    source,
                })?;
            harness.push(running);
        }

        let ids = match &config.pa.request_token {
            Some(token) => RequestIds::new(token.clone()),
            None => RequestIds::from_clock(&*clock),
        };
        let agent = PersonalAgent::new(registry, store)
            .with_stopwords(stopwords)
            .with_lexicon(lexicon)
            .with_comm(config.comm)
            .with_weights(config.rank)
            .with_required_capabilities(config.registry.required_capabilities.clone())
            .with_clock(clock)
            .with_request_ids(ids);

        Ok(Self {
            agent,
            listener,
            harness,
        })
    }

    pub fn personal_agent(&self) -> &PersonalAgent {
        &self.agent
    }

    pub fn registry(&self) -> &Arc<AgentRegistry> {
        self.agent.registry()
    }

    pub fn store(&self) -> &Arc<ResultStore> {
        self.agent.store()
    }

    /// Address accepting REGISTER frames.
    pub fn registry_addr(&self) -> std::net::SocketAddr {
        self.listener.local_addr()
    }

    pub fn harness_agents(&self) -> &[RunningAgent] {
        &self.harness
    }
}
