//! Simulated domain agents.
//!
//! A sim agent holds an immutable triple knowledge base, answers `QUERY`
//! frames by pattern matching, answers `PING` with `PONG`, and registers
//! itself with a registry on start-up. Scripted behaviors inject the faults
//! the fan-out tests need.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::io::AsyncWriteExt;
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use crate::comm::{read_frame, register_with, write_frame, CommError, Message, ResultItem, MAX_FRAME_BYTES};
use crate::registry::AgentDescriptor;
use crate::request::{tokenize, SemanticQuery, Term, TriplePattern};

pub const DEFAULT_CAPABILITY: &str = "semantic-query";
/// Predicates whose object is used as an item's display title.
const TITLE_PREDICATES: [&str; 2] = ["title", "name"];

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: empty field")]
    EmptyField { line: usize },
    #[error("{path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }
}

/// Duplicate-free lowercase triples in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    triples: Vec<Triple>,
}

impl KnowledgeBase {
    /// Builds a knowledge base, lowercasing values and dropping duplicates.
    /// Triples with an empty slot are skipped.
    pub fn from_triples(triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut seen = HashSet::new();
        let triples = triples
            .into_iter()
            .map(|t| {
                Triple::new(
                    t.subject.to_lowercase(),
                    t.predicate.to_lowercase(),
                    t.object.to_lowercase(),
                )
            })
            .filter(|t| !(t.subject.is_empty() || t.predicate.is_empty() || t.object.is_empty()))
            .filter(|t| seen.insert(t.clone()))
            .collect();
        Self { triples }
    }

    /// Parses `subject<TAB>predicate<TAB>object` lines; `#` lines and blank
    /// lines are ignored.
    pub fn parse(text: &str) -> Result<Self, KbError> {
        let mut triples = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(KbError::MalformedLine {
                    line,
                    found: fields.len(),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(KbError::EmptyField { line });
            }
            triples.push(Triple::new(fields[0], fields[1], fields[2]));
        }
        Ok(Self::from_triples(triples))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

pub fn load_knowledge_base(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| KbError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    KnowledgeBase::parse(&text)
}

/// Matches one pattern against one triple, honouring repeated variables.
fn matches(pattern: &TriplePattern, triple: &Triple) -> bool {
    let mut bound: [(Option<&str>, &str); 3] = [(None, ""); 3];
    let slots = [
        (&pattern.subject, triple.subject.as_str()),
        (&pattern.predicate, triple.predicate.as_str()),
        (&pattern.object, triple.object.as_str()),
    ];
    for (i, (term, value)) in slots.into_iter().enumerate() {
        match term {
            Term::Literal(lit) => {
                if lit != value {
                    return false;
                }
            }
            Term::Variable(name) => {
                if bound[..i].iter().any(|(n, v)| *n == Some(name.as_str()) && *v != value) {
                    return false;
                }
                bound[i] = (Some(name.as_str()), value);
            }
        }
    }
    true
}

/// Evaluates the query's patterns against `kb` with OR semantics.
///
/// Every subject that satisfies at least one distinct pattern becomes an
/// item carrying the number of distinct patterns it satisfied. Items are
/// sorted by id.
pub fn answer(kb: &KnowledgeBase, query: &SemanticQuery, agent_id: &str) -> Vec<ResultItem> {
    let distinct: BTreeSet<&TriplePattern> = query.patterns.iter().collect();
    let mut hits: BTreeMap<&str, usize> = BTreeMap::new();
    for pattern in distinct {
        let subjects: BTreeSet<&str> = kb
            .triples
            .iter()
            .filter(|t| matches(pattern, t))
            .map(|t| t.subject.as_str())
            .collect();
        for s in subjects {
            *hits.entry(s).or_default() += 1;
        }
    }

    hits.into_iter()
        .map(|(subject, matched)| {
            let mut terms = BTreeSet::new();
            let mut title = None;
            for t in kb.triples.iter().filter(|t| t.subject == subject) {
                terms.extend(tokenize(&t.object));
                if title.is_none() && TITLE_PREDICATES.contains(&t.predicate.as_str()) {
                    title = Some(t.object.clone());
                }
            }
            ResultItem {
                item_id: subject.to_string(),
                title: title.unwrap_or_else(|| subject.to_string()),
                terms,
                matched_patterns: matched as u32,
                source_agent: agent_id.to_string(),
            }
        })
        .collect()
}

/// Fault injection for harness agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Behavior {
    #[default]
    Normal,
    /// Sleep before answering each query.
    Delay(Duration),
    /// Close the connection without replying.
    DropConnection,
    /// Reply with a frame whose payload is not a valid message.
    MalformedReply,
}

/// Shared counter of queries currently being handled, with a high-water mark.
#[derive(Debug, Default)]
pub struct InFlightGauge {
    current: AtomicUsize,
    peak: AtomicUsize,
}

impl InFlightGauge {
    fn enter(&self) {
        let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
    }

    fn exit(&self) {
        self.current.fetch_sub(1, Ordering::SeqCst);
    }

    pub fn current(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub agent_id: String,
    pub domain: String,
    pub capabilities: BTreeSet<String>,
}

impl AgentSpec {
    pub fn new(agent_id: impl Into<String>, domain: impl Into<String>) -> Self {
        Self {
            agent_id: agent_id.into(),
            domain: domain.into(),
            capabilities: [DEFAULT_CAPABILITY.to_string()].into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    pub behavior: Behavior,
    pub gauge: Option<Arc<InFlightGauge>>,
    /// Re-register every this many milliseconds to stay live. Heartbeat
    /// failures are logged, not fatal.
    pub heartbeat_ms: Option<u64>,
    pub registration_timeout_ms: u64,
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {endpoint}: {source}")]
    BindFailure {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("registration with {registry} failed: {source}")]
    RegistrationFailure {
        registry: String,
        #[source]
        source: CommError,
    },
}

/// A serving sim agent. Dropping it stops the agent.
pub struct RunningAgent {
    descriptor: AgentDescriptor,
    local_addr: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl RunningAgent {
    pub fn descriptor(&self) -> &AgentDescriptor {
        &self.descriptor
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(self) {}
}

impl Drop for RunningAgent {
    fn drop(&mut self) {
        for t in &self.tasks {
            t.abort();
        }
    }
}

/// Binds `endpoint`, registers with `registry_endpoint` (if any) and starts
/// answering queries in the background.
pub async fn serve(
    kb: Arc<KnowledgeBase>,
    endpoint: &str,
    registry_endpoint: Option<&str>,
    spec: AgentSpec,
    options: ServeOptions,
) -> Result<RunningAgent, ServeError> {
    let listener = TcpListener::bind(endpoint)
        .await
        .map_err(|source| ServeError::BindFailure {
            endpoint: endpoint.to_string(),
            source,
        })?;
    let local_addr = listener.local_addr().map_err(|source| ServeError::BindFailure {
        endpoint: endpoint.to_string(),
        source,
    })?;
    let descriptor = AgentDescriptor {
        agent_id: spec.agent_id.clone(),
        domain: spec.domain.clone(),
        capabilities: spec.capabilities.clone(),
        endpoint: local_addr.to_string(),
        last_seen: 0,
    };

    let agent_id: Arc<str> = spec.agent_id.into();
    let accept = {
        let agent_id = agent_id.clone();
        let options = options.clone();
        tokio::spawn(async move {
            loop {
                let Ok((stream, _)) = listener.accept().await else {
                    continue;
                };
                let kb = kb.clone();
                let agent_id = agent_id.clone();
                let options = options.clone();
                tokio::spawn(async move {
                    if let Err(e) = handle_connection(stream, &kb, &agent_id, &options).await {
                        tracing::debug!(agent = %agent_id, error = %e, "connection ended with error");
                    }
                });
            }
        })
    };
    let mut tasks = vec![accept];

    if let Some(registry) = registry_endpoint {
        let timeout_ms = options.registration_timeout_ms.max(1);
        let reg_id = format!("register-{agent_id}");
        register_with(registry, &descriptor, &reg_id, timeout_ms)
            .await
            .map_err(|source| ServeError::RegistrationFailure {
                registry: registry.to_string(),
                source,
            })?;
        if let Some(interval) = options.heartbeat_ms.filter(|ms| *ms > 0) {
            let registry = registry.to_string();
            let descriptor = descriptor.clone();
            tasks.push(tokio::spawn(async move {
                let mut ticker = tokio::time::interval(Duration::from_millis(interval));
                ticker.tick().await;
                loop {
                    ticker.tick().await;
                    if let Err(e) = register_with(&registry, &descriptor, &reg_id, timeout_ms).await {
                        tracing::warn!(agent = %descriptor.agent_id, error = %e, "heartbeat failed");
                    }
                }
            }));
        }
    }

    Ok(RunningAgent {
        descriptor,
        local_addr,
        tasks,
    })
}

async fn handle_connection(
    mut stream: TcpStream,
    kb: &KnowledgeBase,
    agent_id: &str,
    options: &ServeOptions,
) -> Result<(), crate::comm::CodecError> {
    loop {
        let msg = match read_frame(&mut stream, MAX_FRAME_BYTES).await {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()),
            Err(e) => {
                let reply = Message::Error {
                    request_id: String::new(),
                    code: "malformed".into(),
                    text: e.to_string(),
                };
                let _ = write_frame(&mut stream, &reply, MAX_FRAME_BYTES).await;
                return Err(e);
            }
        };
        let reply = match msg {
            Message::Query { request_id, query } => {
                if let Some(g) = &options.gauge {
                    g.enter();
                }
                let reply = scripted_answer(&mut stream, kb, agent_id, options.behavior, request_id, &query).await;
                if let Some(g) = &options.gauge {
                    g.exit();
                }
                match reply {
                    Some(r) => r,
                    None => return Ok(()),
                }
            }
            Message::Ping { request_id } => Message::Pong { request_id },
            other => Message::Error {
                request_id: other.request_id().to_string(),
                code: "unsupported".into(),
                text: format!("agent does not handle {}", other.kind()),
            },
        };
        write_frame(&mut stream, &reply, MAX_FRAME_BYTES).await?;
    }
}

/// Returns the reply to send, or `None` when the connection must close.
async fn scripted_answer(
    stream: &mut TcpStream,
    kb: &KnowledgeBase,
    agent_id: &str,
    behavior: Behavior,
    request_id: String,
    query: &SemanticQuery,
) -> Option<Message> {
    match behavior {
        Behavior::Normal => {}
        Behavior::Delay(d) => tokio::time::sleep(d).await,
        Behavior::DropConnection => return None,
        Behavior::MalformedReply => {
            let garbage = b"{\"kind\":\"RESULTS\",";
            let mut frame = (garbage.len() as u32).to_be_bytes().to_vec();
            frame.extend_from_slice(garbage);
            let _ = stream.write_all(&frame).await;
            return None;
        }
    }
    Some(Message::Results {
        request_id,
        items: answer(kb, query, agent_id),
    })
}
