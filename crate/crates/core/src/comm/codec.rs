use std::fmt;
use std::io::{self, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::ResultItem;
use crate::registry::AgentDescriptor;
use crate::request::SemanticQuery;

/// Default cap on a frame payload (1 MiB).
pub const MAX_FRAME_BYTES: usize = 1_048_576;

const HEADER_LEN: usize = 4;

/// Upper bound on the in-memory size of one decoded array element (a
/// `ResultItem` is the largest). Capping array lengths at
/// `max_frame_bytes / 64` keeps every collection allocation within twice
/// the frame cap, whatever the JSON looks like.
const ELEMENT_BUDGET: usize = 64;

/// Deepest bracket nesting accepted; matches the JSON parser's own limit.
const MAX_DEPTH: usize = 128;

/// Longest JSON array accepted in a frame of at most `max_frame_bytes`.
pub fn max_array_len(max_frame_bytes: usize) -> usize {
    (max_frame_bytes / ELEMENT_BUDGET).max(64)
}

/// Scans raw JSON and rejects any array with more than `max` elements or
/// nesting deeper than [`MAX_DEPTH`]. Other malformations pass through; the
/// parser reports them.
fn check_array_lengths(payload: &[u8], max: usize) -> Result<(), CodecError> {
    // One entry per open bracket: Some(count) for arrays, None for objects.
    let mut stack: Vec<Option<usize>> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    let mut pending_value = false;
    for &b in payload {
        if in_string {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_string = false,
                _ => {}
            }
            continue;
        }
        if b.is_ascii_whitespace() {
            continue;
        }
        if let (true, Some(Some(n))) = (pending_value, stack.last_mut()) {
            if b != b']' {
                *n += 1;
                if *n > max {
                    return Err(CodecError::ArrayTooLong { len: *n, max });
                }
            }
        }
        pending_value = false;
        match b {
            b'"' => in_string = true,
            b'[' | b'{' if stack.len() == MAX_DEPTH => {
                return Err(CodecError::MalformedPayload(format!("nesting deeper than {MAX_DEPTH}")));
            }
            b'[' => {
                stack.push(Some(0));
                pending_value = true;
            }
            b'{' => stack.push(None),
            b']' | b'}' => {
                stack.pop();
            }
            b',' => pending_value = matches!(stack.last(), Some(Some(_))),
            _ => {}
        }
    }
    Ok(())
}

fn checked_message(payload: &[u8], max_frame_bytes: usize) -> Result<Message, CodecError> {
    check_array_lengths(payload, max_array_len(max_frame_bytes))?;
    Message::from_payload(payload)
}

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("frame of {len} bytes exceeds the {max} byte cap")]
    FrameTooLarge { len: usize, max: usize },
    #[error("truncated frame: expected {expected} bytes, got {got}")]
    TruncatedFrame { expected: usize, got: usize },
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("array of {len} elements exceeds the limit of {max}")]
    ArrayTooLong { len: usize, max: usize },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    Query,
    Results,
    Error,
    Register,
    Ack,
    Ping,
    Pong,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Query => "QUERY",
            MessageKind::Results => "RESULTS",
            MessageKind::Error => "ERROR",
            MessageKind::Register => "REGISTER",
            MessageKind::Ack => "ACK",
            MessageKind::Ping => "PING",
            MessageKind::Pong => "PONG",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "QUERY" => MessageKind::Query,
            "RESULTS" => MessageKind::Results,
            "ERROR" => MessageKind::Error,
            "REGISTER" => MessageKind::Register,
            "ACK" => MessageKind::Ack,
            "PING" => MessageKind::Ping,
            "PONG" => MessageKind::Pong,
            _ => return None,
        })
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Query {
        request_id: String,
        query: SemanticQuery,
    },
    Results {
        request_id: String,
        items: Vec<ResultItem>,
    },
    Error {
        request_id: String,
        code: String,
        text: String,
    },
    Register {
        request_id: String,
        agent: AgentDescriptor,
    },
    Ack {
        request_id: String,
    },
    Ping {
        request_id: String,
    },
    Pong {
        request_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorBody {
    code: String,
    text: String,
}

#[derive(Serialize)]
#[serde(untagged)]
enum BodyRef<'a> {
    Query(&'a SemanticQuery),
    Results(&'a [ResultItem]),
    Error { code: &'a str, text: &'a str },
    Register(&'a AgentDescriptor),
    Empty(()),
}

#[derive(Serialize)]
struct WireOut<'a> {
    kind: &'static str,
    request_id: &'a str,
    body: BodyRef<'a>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    kind: String,
    request_id: String,
    body: serde_json::Value,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Query { .. } => MessageKind::Query,
            Message::Results { .. } => MessageKind::Results,
            Message::Error { .. } => MessageKind::Error,
            Message::Register { .. } => MessageKind::Register,
            Message::Ack { .. } => MessageKind::Ack,
            Message::Ping { .. } => MessageKind::Ping,
            Message::Pong { .. } => MessageKind::Pong,
        }
    }

    pub fn request_id(&self) -> &str {
        match self {
            Message::Query { request_id, .. }
            | Message::Results { request_id, .. }
            | Message::Error { request_id, .. }
            | Message::Register { request_id, .. }
            | Message::Ack { request_id }
            | Message::Ping { request_id }
            | Message::Pong { request_id } => request_id,
        }
    }

    /// Canonical JSON payload: `{"kind":..,"request_id":..,"body":..}`.
    pub fn to_payload(&self) -> Vec<u8> {
        let body = match self {
            Message::Query { query, .. } => BodyRef::Query(query),
            Message::Results { items, .. } => BodyRef::Results(items),
            Message::Error { code, text, .. } => BodyRef::Error { code, text },
            Message::Register { agent, .. } => BodyRef::Register(agent),
            Message::Ack { .. } | Message::Ping { .. } | Message::Pong { .. } => BodyRef::Empty(()),
        };
        let wire = WireOut {
            kind: self.kind().as_str(),
            request_id: self.request_id(),
            body,
        };
        serde_json::to_vec(&wire).expect("message serialization is infallible")
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self, CodecError> {
        let malformed = |e: String| CodecError::MalformedPayload(e);
        let text = std::str::from_utf8(payload).map_err(|e| malformed(e.to_string()))?;
        let wire: WireIn = serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?;
        let kind = MessageKind::parse(&wire.kind).ok_or_else(|| malformed(format!("unknown kind {:?}", wire.kind)))?;
        let request_id = wire.request_id;
        let body = wire.body;
        let from_body = |what: &str| malformed(format!("bad {what} body"));

        let msg = match kind {
            MessageKind::Query => {
                let query: SemanticQuery = serde_json::from_value(body).map_err(|e| malformed(e.to_string()))?;
                query.validate().map_err(malformed)?;
                Message::Query { request_id, query }
            }
            MessageKind::Results => {
                let items: Vec<ResultItem> = serde_json::from_value(body).map_err(|e| malformed(e.to_string()))?;
                Message::Results { request_id, items }
            }
            MessageKind::Error => {
                let ErrorBody { code, text } = serde_json::from_value(body).map_err(|_| from_body("ERROR"))?;
                Message::Error { request_id, code, text }
            }
            MessageKind::Register => {
                let agent: AgentDescriptor = serde_json::from_value(body).map_err(|e| malformed(e.to_string()))?;
                Message::Register { request_id, agent }
            }
            MessageKind::Ack | MessageKind::Ping | MessageKind::Pong => {
                if !body.is_null() {
                    return Err(from_body(kind.as_str()));
                }
                match kind {
                    MessageKind::Ack => Message::Ack { request_id },
                    MessageKind::Ping => Message::Ping { request_id },
                    _ => Message::Pong { request_id },
                }
            }
        };
        Ok(msg)
    }
}

/// A length-delimited payload as it travels on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    payload: Vec<u8>,
}

impl Frame {
    pub fn new(payload: Vec<u8>, max_frame_bytes: usize) -> Result<Self, CodecError> {
        if payload.len() > max_frame_bytes || payload.len() > u32::MAX as usize {
            return Err(CodecError::FrameTooLarge {
                len: payload.len(),
                max: max_frame_bytes,
            });
        }
        Ok(Self { payload })
    }

    pub fn len(&self) -> u32 {
        self.payload.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&self.len().to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }
}

pub fn encode_frame(message: &Message, max_frame_bytes: usize) -> Result<Vec<u8>, CodecError> {
    let frame = Frame::new(message.to_payload(), max_frame_bytes)?;
    check_array_lengths(frame.payload(), max_array_len(max_frame_bytes))?;
    Ok(frame.to_bytes())
}

fn check_len(header: [u8; HEADER_LEN], max_frame_bytes: usize) -> Result<usize, CodecError> {
    let len = u32::from_be_bytes(header) as usize;
    if len > max_frame_bytes {
        return Err(CodecError::FrameTooLarge {
            len,
            max: max_frame_bytes,
        });
    }
    Ok(len)
}

/// Reads as many bytes as are available up to `buf.len()`.
fn fill<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match reader.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads exactly one frame from `reader`; bytes after it stay unread.
///
/// The declared length is checked against the cap before any payload buffer
/// is allocated.
pub fn decode_frame<R: Read>(reader: &mut R, max_frame_bytes: usize) -> Result<Message, CodecError> {
    let mut header = [0u8; HEADER_LEN];
    let got = fill(reader, &mut header)?;
    if got < HEADER_LEN {
        return Err(CodecError::TruncatedFrame {
            expected: HEADER_LEN,
            got,
        });
    }
    let len = check_len(header, max_frame_bytes)?;
    let mut payload = vec![0u8; len];
    let got = fill(reader, &mut payload)?;
    if got < len {
        return Err(CodecError::TruncatedFrame { expected: len, got });
    }
    checked_message(&payload, max_frame_bytes)
}

/// Async counterpart of [`decode_frame`]. Returns `Ok(None)` on a clean end
/// of stream before the first header byte.
pub async fn read_frame<R: AsyncRead + Unpin>(
    reader: &mut R,
    max_frame_bytes: usize,
) -> Result<Option<Message>, CodecError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        let n = reader.read(&mut header[got..]).await?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(CodecError::TruncatedFrame {
                expected: HEADER_LEN,
                got,
            });
        }
        got += n;
    }
    let len = check_len(header, max_frame_bytes)?;
    let mut payload = vec![0u8; len];
    let mut got = 0;
    while got < len {
        let n = reader.read(&mut payload[got..]).await?;
        if n == 0 {
            return Err(CodecError::TruncatedFrame { expected: len, got });
        }
        got += n;
    }
    checked_message(&payload, max_frame_bytes).map(Some)
}

pub async fn write_frame<W: AsyncWrite + Unpin>(
    writer: &mut W,
    message: &Message,
    max_frame_bytes: usize,
) -> Result<(), CodecError> {
    let bytes = encode_frame(message, max_frame_bytes)?;
    writer.write_all(&bytes).await?;
    writer.flush().await?;
    Ok(())
}
