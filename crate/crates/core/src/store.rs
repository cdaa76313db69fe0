//! Result store: agent responses grouped per request, optionally journaled to
//! a JSON-lines file and replayed on open.
//!
//! Journal lines look like `{"request_id":"..","response":{..}}`. A torn final
//! line (no trailing newline) is discarded and truncated away on open; any
//! other unparsable line is an error.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::comm::AgentResponse;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("response for {found} persisted under request {expected}")]
    RequestIdMismatch { expected: String, found: String },
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredBatch {
    pub request_id: String,
    pub responses: Vec<AgentResponse>,
    /// Time of the first append seen by this process (replay time for
    /// batches loaded from the journal).
    pub created_at: u64,
}

#[derive(Serialize)]
struct JournalLineRef<'a> {
    request_id: &'a str,
    response: &'a AgentResponse,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JournalLine {
    request_id: String,
    response: AgentResponse,
}

#[derive(Debug)]
struct Journal {
    path: PathBuf,
    file: File,
}

#[derive(Debug)]
pub struct ResultStore {
    batches: RwLock<HashMap<String, StoredBatch>>,
    journal: Option<Mutex<Journal>>,
}

impl Default for ResultStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl ResultStore {
    pub fn in_memory() -> Self {
        Self {
            batches: RwLock::new(HashMap::new()),
            journal: None,
        }
    }

    /// Opens (creating if needed) the journal at `path` and replays it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let now = SystemClock.now_ms();
        let mut batches: HashMap<String, StoredBatch> = HashMap::new();
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut valid_len = 0usize;
        let mut offset = 0usize;
        let mut line_no = 0usize;
        while offset < bytes.len() {
            line_no += 1;
            let (line, next, terminated) = match bytes[offset..].iter().position(|&b| b == b'\n') {
                Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
                None => (&bytes[offset..], bytes.len(), false),
            };
            offset = next;
            if !terminated {
                tracing::warn!(path = %path.display(), line = line_no, "discarding torn journal tail");
                break;
            }
            valid_len = next;
            if line.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let entry: JournalLine = serde_json::from_slice(line)
                .map_err(|e| StoreError::StorageFailure(format!("{}: line {line_no}: {e}", path.display())))?;
            batches
                .entry(entry.request_id.clone())
                .or_insert_with(|| StoredBatch {
                    request_id: entry.request_id,
                    responses: Vec::new(),
                    created_at: now,
                })
                .responses
                .push(entry.response);
        }

        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() > valid_len as u64 {
            file.set_len(valid_len as u64)?;
        }
        Ok(Self {
            batches: RwLock::new(batches),
            journal: Some(Mutex::new(Journal { path, file })),
        })
    }

    pub fn journal_path(&self) -> Option<PathBuf> {
        self.journal
            .as_ref()
            .map(|j| j.lock().unwrap_or_else(|e| e.into_inner()).path.clone())
    }

    /// Appends `response` to the batch of `request_id`. With a journal, the
    /// line is synced to disk before this returns.
    pub fn persist(&self, request_id: &str, response: AgentResponse) -> Result<(), StoreError> {
        if response.request_id != request_id {
            return Err(StoreError::RequestIdMismatch {
                expected: request_id.to_string(),
                found: response.request_id,
            });
        }
        // The journal lock orders file lines and in-memory appends identically.
        let _journal_guard = match &self.journal {
            Some(journal) => {
                let mut journal = journal.lock().unwrap_or_else(|e| e.into_inner());
                let mut line = serde_json::to_vec(&JournalLineRef {
                    request_id,
                    response: &response,
                })
                .map_err(|e| StoreError::StorageFailure(e.to_string()))?;
                line.push(b'\n');
                journal.file.write_all(&line)?;
                journal.file.sync_data()?;
                Some(journal)
            }
            None => None,
        };
        let now = SystemClock.now_ms();
        let mut batches = self.batches.write().unwrap_or_else(|e| e.into_inner());
        batches
            .entry(request_id.to_string())
            .or_insert_with(|| StoredBatch {
                request_id: request_id.to_string(),
                responses: Vec::new(),
                created_at: now,
            })
            .responses
            .push(response);
        Ok(())
    }

    /// Responses of `request_id` in append order; empty when unknown.
    pub fn fetch(&self, request_id: &str) -> Result<Vec<AgentResponse>, StoreError> {
        let batches = self.batches.read().unwrap_or_else(|e| e.into_inner());
        Ok(batches.get(request_id).map(|b| b.responses.clone()).unwrap_or_default())
    }

    pub fn batch(&self, request_id: &str) -> Option<StoredBatch> {
        let batches = self.batches.read().unwrap_or_else(|e| e.into_inner());
        batches.get(request_id).cloned()
    }

    pub fn request_ids(&self) -> Vec<String> {
        let batches = self.batches.read().unwrap_or_else(|e| e.into_inner());
        let mut ids: Vec<String> = batches.keys().cloned().collect();
        ids.sort();
        ids
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{Outcome, ResultItem};
    use proptest::prelude::*;

    fn response(agent: &str, request: &str) -> AgentResponse {
        AgentResponse {
            agent_id: agent.into(),
            request_id: request.into(),
            items: vec![ResultItem {
                item_id: format!("{agent}-item"),
                title: "t".into(),
                terms: ["x".to_string()].into(),
                matched_patterns: 1,
                source_agent: agent.into(),
            }],
            latency_ms: 3,
            outcome: Outcome::Ok,
        }
    }

    #[test]
    fn append_order_and_absent_ids() {
        let store = ResultStore::in_memory();
        assert!(store.fetch("r").unwrap().is_empty());
        let (a, b, c) = (response("a", "r"), response("b", "r"), response("c", "r"));
        store.persist("r", a.clone()).unwrap();
        assert_eq!(store.fetch("r").unwrap(), vec![a.clone()]);
        store.persist("r", b.clone()).unwrap();
        store.persist("r", c.clone()).unwrap();
        assert_eq!(store.fetch("r").unwrap(), vec![a, b, c]);
        assert_eq!(store.fetch("r").unwrap(), store.fetch("r").unwrap());
    }

    #[test]
    fn mismatched_request_id() {
        let store = ResultStore::in_memory();
        assert!(matches!(
            store.persist("r1", response("a", "r2")),
            Err(StoreError::RequestIdMismatch { .. })
        ));
        assert!(store.fetch("r1").unwrap().is_empty());
    }

    #[test]
    fn journal_replay_after_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let store = ResultStore::open(&path).unwrap();
            store.persist("r1", response("a", "r1")).unwrap();
            store.persist("r2", response("b", "r2")).unwrap();
            store.persist("r1", response("c", "r1")).unwrap();
        }
        let store = ResultStore::open(&path).unwrap();
        assert_eq!(
            store.fetch("r1").unwrap(),
            vec![response("a", "r1"), response("c", "r1")]
        );
        assert_eq!(store.fetch("r2").unwrap(), vec![response("b", "r2")]);
        assert_eq!(store.journal_path(), Some(path));
    }

    #[test]
    fn torn_tail_is_discarded_and_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        {
            let store = ResultStore::open(&path).unwrap();
            store.persist("r1", response("a", "r1")).unwrap();
        }
        let intact = std::fs::read(&path).unwrap();
        let mut torn = intact.clone();
        torn.extend_from_slice(br#"{"request_id":"r1","resp"#);
        std::fs::write(&path, &torn).unwrap();

        let store = ResultStore::open(&path).unwrap();
        assert_eq!(store.fetch("r1").unwrap().len(), 1);
        assert_eq!(std::fs::read(&path).unwrap(), intact);
        store.persist("r1", response("b", "r1")).unwrap();
        drop(store);
        assert_eq!(ResultStore::open(&path).unwrap().fetch("r1").unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_a_storage_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("journal.jsonl");
        std::fs::write(&path, "garbage\n{}\n").unwrap();
        assert!(matches!(ResultStore::open(&path), Err(StoreError::StorageFailure(_))));
    }

    #[test]
    fn unwritable_journal_surfaces_storage_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing-dir").join("journal.jsonl");
        assert!(matches!(ResultStore::open(&path), Err(StoreError::StorageFailure(_))));
    }

    #[test]
    fn concurrent_persists_keep_per_request_order() {
        let store = std::sync::Arc::new(ResultStore::in_memory());
        let handles: Vec<_> = (0..4)
            .map(|t| {
                let store = store.clone();
                std::thread::spawn(move || {
                    let rid = format!("r{t}");
                    for i in 0..100 {
                        store.persist(&rid, response(&format!("a{i:03}"), &rid)).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for t in 0..4 {
            let got = store.fetch(&format!("r{t}")).unwrap();
            let ids: Vec<_> = got.iter().map(|r| r.agent_id.clone()).collect();
            let expected: Vec<_> = (0..100).map(|i| format!("a{i:03}")).collect();
            assert_eq!(ids, expected);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn reopen_yields_identical_batches(
            ops in proptest::collection::vec((0u8..4, 0u8..10, 0u64..1000), 0..30)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("j.jsonl");
            let store = ResultStore::open(&path).unwrap();
            let mut previous: HashMap<String, Vec<AgentResponse>> = HashMap::new();
            for (req, agent, latency) in ops {
                let rid = format!("r{req}");
                let mut resp = response(&format!("a{agent}"), &rid);
                resp.latency_ms = latency;
                store.persist(&rid, resp).unwrap();
                let now = store.fetch(&rid).unwrap();
                let before = previous.get(&rid).cloned().unwrap_or_default();
                prop_assert!(now.starts_with(&before));
                previous.insert(rid, now);
            }
            drop(store);
            let reopened = ResultStore::open(&path).unwrap();
            for (rid, responses) in previous {
                prop_assert_eq!(reopened.fetch(&rid).unwrap(), responses);
            }
        }
    }
}
