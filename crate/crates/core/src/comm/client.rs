use std::collections::HashMap;
use std::time::{Duration, Instant};

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpStream;
use tokio::time::timeout;

use super::codec::{read_frame, write_frame, CodecError, Message, MAX_FRAME_BYTES};
use super::{AgentResponse, Outcome};
use crate::registry::AgentDescriptor;
use crate::request::SemanticQuery;

/// Knobs for talking to agents. Field names match the `comm.*` config keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommSettings {
    pub per_agent_timeout_ms: u64,
    pub overall_deadline_ms: u64,
    pub max_parallel: usize,
    pub max_frame_bytes: usize,
}

impl Default for CommSettings {
    fn default() -> Self {
        Self {
            per_agent_timeout_ms: 2_000,
            overall_deadline_ms: 5_000,
            max_parallel: 8,
            max_frame_bytes: MAX_FRAME_BYTES,
        }
    }
}

impl CommSettings {
    pub fn validate(&self) -> Result<(), FanOutError> {
        let bad = |m: &str| Err(FanOutError::InvalidSettings(m.to_string()));
        if self.per_agent_timeout_ms == 0 {
            return bad("per_agent_timeout_ms must be positive");
        }
        if self.overall_deadline_ms < self.per_agent_timeout_ms {
            return bad("overall_deadline_ms must be at least per_agent_timeout_ms");
        }
        if self.max_parallel == 0 {
            return bad("max_parallel must be at least 1");
        }
        if self.max_frame_bytes == 0 {
            return bad("max_frame_bytes must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FanOutError {
    #[error("no agents given")]
    NoAgentsGiven,
    #[error("invalid communication settings: {0}")]
    InvalidSettings(String),
}

/// Failures of the simple request/reply helpers ([`ping`], [`register_with`]).
#[derive(Debug, Error)]
pub enum CommError {
    #[error("connect failed: {0}")]
    Connect(std::io::Error),
    #[error("timed out")]
    Timeout,
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("peer closed the connection")]
    Closed,
    #[error("peer rejected request: {code}: {text}")]
    Rejected { code: String, text: String },
    #[error("unexpected reply: {0}")]
    Unexpected(String),
}

async fn round_trip(stream: &mut TcpStream, msg: &Message, max_frame_bytes: usize) -> Result<Message, CommError> {
    write_frame(stream, msg, max_frame_bytes).await?;
    read_frame(stream, max_frame_bytes).await?.ok_or(CommError::Closed)
}

async fn request_reply(
    endpoint: &str,
    msg: &Message,
    timeout_ms: u64,
    max_frame_bytes: usize,
) -> Result<Message, CommError> {
    let exchange = async {
        let mut stream = TcpStream::connect(endpoint).await.map_err(CommError::Connect)?;
        round_trip(&mut stream, msg, max_frame_bytes).await
    };
    timeout(Duration::from_millis(timeout_ms), exchange)
        .await
        .map_err(|_| CommError::Timeout)?
}

/// Sends `PING` and waits for the matching `PONG`.
pub async fn ping(endpoint: &str, timeout_ms: u64) -> Result<Duration, CommError> {
    let start = Instant::now();
    let request_id = format!("ping-{}", start.elapsed().as_nanos());
    match request_reply(
        endpoint,
        &Message::Ping {
            request_id: request_id.clone(),
        },
        timeout_ms,
        MAX_FRAME_BYTES,
    )
    .await?
    {
        Message::Pong { request_id: echoed } if echoed == request_id => Ok(start.elapsed()),
        other => Err(CommError::Unexpected(other.kind().to_string())),
    }
}

/// Sends a `REGISTER` frame for `agent` to the registry at `registry_endpoint`.
pub async fn register_with(
    registry_endpoint: &str,
    agent: &AgentDescriptor,
    request_id: &str,
    timeout_ms: u64,
) -> Result<(), CommError> {
    let msg = Message::Register {
        request_id: request_id.to_string(),
        agent: agent.clone(),
    };
    match request_reply(registry_endpoint, &msg, timeout_ms, MAX_FRAME_BYTES).await? {
        Message::Ack { request_id: echoed } if echoed == request_id => Ok(()),
        Message::Error { code, text, .. } => Err(CommError::Rejected { code, text }),
        other => Err(CommError::Unexpected(format!(
            "{} for {}",
            other.kind(),
            other.request_id()
        ))),
    }
}

/// Queries one agent. Every failure mode is reported through the outcome.
pub async fn query_agent(
    descriptor: &AgentDescriptor,
    query: &SemanticQuery,
    timeout_ms: u64,
    max_frame_bytes: usize,
) -> AgentResponse {
    let start = Instant::now();
    let agent_id = descriptor.agent_id.as_str();
    let request_id = query.request_id.as_str();

    let exchange = async {
        let mut stream = match TcpStream::connect(&descriptor.endpoint).await {
            Ok(s) => s,
            Err(e) => {
                tracing::debug!(agent = agent_id, error = %e, "connect failed");
                return (Outcome::ConnectFailed, Vec::new());
            }
        };
        let msg = Message::Query {
            request_id: request_id.to_string(),
            query: query.clone(),
        };
        let reply = match round_trip(&mut stream, &msg, max_frame_bytes).await {
            Ok(reply) => reply,
            Err(e) => {
                tracing::debug!(agent = agent_id, error = %e, "exchange failed");
                return (Outcome::ProtocolError, Vec::new());
            }
        };
        match reply {
            Message::Results {
                request_id: echoed,
                mut items,
            } if echoed == request_id => {
                let limit = query.patterns.len() as u32;
                if items.iter().any(|i| i.matched_patterns > limit) {
                    tracing::debug!(agent = agent_id, "item claims more matches than patterns");
                    return (Outcome::ProtocolError, Vec::new());
                }
                for item in &mut items {
                    item.source_agent = agent_id.to_string();
                }
                (Outcome::Ok, items)
            }
            Message::Error { code, text, .. } => {
                tracing::debug!(agent = agent_id, %code, %text, "agent returned an error");
                (Outcome::ProtocolError, Vec::new())
            }
            other => {
                tracing::debug!(agent = agent_id, kind = %other.kind(), "unexpected reply");
                (Outcome::ProtocolError, Vec::new())
            }
        }
    };

    let (outcome, items) = timeout(Duration::from_millis(timeout_ms), exchange)
        .await
        .unwrap_or((Outcome::Timeout, Vec::new()));
    AgentResponse {
        agent_id: agent_id.to_string(),
        request_id: request_id.to_string(),
        items,
        latency_ms: start.elapsed().as_millis() as u64,
        outcome,
    }
}

/// Scatter-gather: queries every agent with at most `max_parallel` requests
/// in flight and a hard overall deadline.
///
/// Returns exactly one response per input descriptor, sorted by agent id.
/// Agents still pending at the deadline are reported as `Timeout`.
pub async fn fan_out(
    query: &SemanticQuery,
    agents: &[AgentDescriptor],
    settings: &CommSettings,
) -> Result<Vec<AgentResponse>, FanOutError> {
    if agents.is_empty() {
        return Err(FanOutError::NoAgentsGiven);
    }
    settings.validate()?;

    let start = Instant::now();
    let deadline = tokio::time::Instant::from_std(start) + Duration::from_millis(settings.overall_deadline_ms);
    let mut done: HashMap<usize, AgentResponse> = HashMap::with_capacity(agents.len());
    {
        let mut pending = stream::iter(0..agents.len())
            .map(|idx| {
                let agent = &agents[idx];
                async move {
                    let response =
                        query_agent(agent, query, settings.per_agent_timeout_ms, settings.max_frame_bytes).await;
                    (idx, response)
                }
            })
            .buffer_unordered(settings.max_parallel);
        loop {
            match tokio::time::timeout_at(deadline, pending.next()).await {
                Ok(Some((idx, response))) => {
                    done.insert(idx, response);
                }
                Ok(None) => break,
                Err(_) => {
                    tracing::warn!(pending = agents.len() - done.len(), "fan-out deadline reached");
                    break;
                }
            }
        }
    }

    let elapsed = start.elapsed().as_millis() as u64;
    let mut responses: Vec<(usize, AgentResponse)> = agents
        .iter()
        .enumerate()
        .map(|(idx, agent)| {
            let response = done.remove(&idx).unwrap_or_else(|| {
                AgentResponse::failed(&agent.agent_id, &query.request_id, Outcome::Timeout, elapsed)
            });
            (idx, response)
        })
        .collect();
    responses.sort_by(|(ia, a), (ib, b)| a.agent_id.cmp(&b.agent_id).then(ia.cmp(ib)));
    Ok(responses.into_iter().map(|(_, r)| r).collect())
}
