//! Agent communicator: the framed wire protocol and scatter-gather querying
//! of located agents.
//!
//! Every message travels as one frame: a 4-byte big-endian payload length
//! followed by a UTF-8 JSON payload with fields `kind`, `request_id`, `body`.
//! Per-agent failures are never raised; they come back as an [`Outcome`].

mod client;
mod codec;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use client::{fan_out, ping, query_agent, register_with, CommError, CommSettings, FanOutError};
pub use codec::{
    decode_frame, encode_frame, read_frame, write_frame, CodecError, Frame, Message, MessageKind, MAX_FRAME_BYTES,
};

/// One item an agent returned for a query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultItem {
    pub item_id: String,
    pub title: String,
    pub terms: BTreeSet<String>,
    pub matched_patterns: u32,
    pub source_agent: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Ok,
    Timeout,
    ConnectFailed,
    ProtocolError,
}

impl Outcome {
    pub fn is_ok(self) -> bool {
        self == Outcome::Ok
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "Ok",
            Outcome::Timeout => "Timeout",
            Outcome::ConnectFailed => "ConnectFailed",
            Outcome::ProtocolError => "ProtocolError",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What one agent said (or failed to say) about one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentResponse {
    pub agent_id: String,
    pub request_id: String,
    pub items: Vec<ResultItem>,
    pub latency_ms: u64,
    pub outcome: Outcome,
}

impl AgentResponse {
    pub fn failed(
        agent_id: impl Into<String>,
        request_id: impl Into<String>,
        outcome: Outcome,
        latency_ms: u64,
    ) -> Self {
        Self {
            agent_id: agent_id.into(),
            request_id: request_id.into(),
            items: Vec::new(),
            latency_ms,
            outcome,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.outcome.is_ok() && !self.items.is_empty() {
            return Err(format!("{} outcome carries items", self.outcome));
        }
        Ok(())
    }
}
