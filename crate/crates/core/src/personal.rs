//! Personal agent: receives a full-text request and drives it through the
//! pipeline, recording which stage ran in which order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::comm::{fan_out, CommSettings, FanOutError, Outcome};
use crate::rank::{rank, RankWeights, RankedResult};
use crate::registry::AgentRegistry;
use crate::render::{render, Format, RenderedOutput};
use crate::request::{
    build_semantic_query, default_lexicon, default_stopwords, Lexicon, RequestError, SemanticQuery, Stopwords,
    UserRequest,
};
use crate::store::{ResultStore, StoreError};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    #[serde(rename = "PA")]
    PersonalAgent,
    #[serde(rename = "RPU")]
    RequestProcessing,
    #[serde(rename = "AL")]
    AgentLocator,
    #[serde(rename = "AC")]
    AgentCommunicator,
    #[serde(rename = "DB")]
    Database,
    #[serde(rename = "LB")]
    ListBuilder,
    #[serde(rename = "RG")]
    ResultGenerator,
}

impl Stage {
    pub const PIPELINE: [Stage; 7] = [
        Stage::PersonalAgent,
        Stage::RequestProcessing,
        Stage::AgentLocator,
        Stage::AgentCommunicator,
        Stage::Database,
        Stage::ListBuilder,
        Stage::ResultGenerator,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Stage::PersonalAgent => "PA",
            Stage::RequestProcessing => "RPU",
            Stage::AgentLocator => "AL",
            Stage::AgentCommunicator => "AC",
            Stage::Database => "DB",
            Stage::ListBuilder => "LB",
            Stage::ResultGenerator => "RG",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub request_id: String,
    pub semantic_query: SemanticQuery,
    pub agents_located: usize,
    pub agent_outcomes: BTreeMap<String, Outcome>,
    pub results: Vec<RankedResult>,
    pub elapsed_ms: u64,
    /// Stages in the order they were entered.
    pub trace: Vec<Stage>,
    /// Agent ids of the stored responses the list builder consumed.
    pub ranked_from: Vec<String>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("request text is empty")]
    EmptyRequest,
    #[error("no live agents for domain {domain:?}")]
    NoAgentsAvailable { request_id: String, domain: String },
    #[error("none of the {} located agents responded", outcomes.len())]
    NoAgentsResponded {
        request_id: String,
        outcomes: BTreeMap<String, Outcome>,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    FanOut(#[from] FanOutError),
}

impl From<RequestError> for PipelineError {
    fn from(e: RequestError) -> Self {
        match e {
            RequestError::EmptyRequest => PipelineError::EmptyRequest,
        }
    }
}

impl PipelineError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::EmptyRequest => 2,
            PipelineError::NoAgentsAvailable { .. } => 3,
            PipelineError::NoAgentsResponded { .. } => 4,
            _ => 1,
        }
    }
}

/// Monotonic request ids of the form `<token>-<counter>`.
#[derive(Debug)]
pub struct RequestIds {
    token: String,
    next: AtomicU64,
}

impl RequestIds {
    pub fn new(token: impl Into<String>) -> Self {
        Self {
            token: token.into(),
            next: AtomicU64::new(1),
        }
    }

    /// Token derived from the process start time.
    pub fn from_clock(clock: &dyn Clock) -> Self {
        Self::new(format!("{:x}", clock.now_ms()))
    }

    pub fn next_id(&self) -> String {
        let n = self.next.fetch_add(1, Ordering::SeqCst);
        format!("{}-{n:06}", self.token)
    }
}

pub struct PersonalAgent {
    registry: Arc<AgentRegistry>,
    store: Arc<ResultStore>,
    stopwords: Stopwords,
    lexicon: Lexicon,
    comm: CommSettings,
    weights: RankWeights,
    required_capabilities: BTreeSet<String>,
    clock: Arc<dyn Clock>,
    ids: RequestIds,
}

impl PersonalAgent {
    pub fn new(registry: Arc<AgentRegistry>, store: Arc<ResultStore>) -> Self {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        Self {
            registry,
            store,
            stopwords: default_stopwords(),
            lexicon: default_lexicon(),
            comm: CommSettings::default(),
            weights: RankWeights::default(),
            required_capabilities: BTreeSet::new(),
            ids: RequestIds::from_clock(&*clock),
            clock,
        }
    }

    pub fn with_stopwords(mut self, stopwords: Stopwords) -> Self {
        self.stopwords = stopwords;
        self
    }

    pub fn with_lexicon(mut self, lexicon: Lexicon) -> Self {
        self.lexicon = lexicon;
        self
    }

    pub fn with_comm(mut self, comm: CommSettings) -> Self {
        self.comm = comm;
        self
    }

    pub fn with_weights(mut self, weights: RankWeights) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_required_capabilities(mut self, caps: BTreeSet<String>) -> Self {
        self.required_capabilities = caps;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_request_ids(mut self, ids: RequestIds) -> Self {
        self.ids = ids;
        self
    }

    pub fn registry(&self) -> &Arc<AgentRegistry> {
        &self.registry
    }

    pub fn store(&self) -> &Arc<ResultStore> {
        &self.store
    }

    /// Runs one request end to end and returns the rendered output together
    /// with a report of what happened.
    pub async fn handle_request(
        &self,
        text: &str,
        format: Format,
    ) -> Result<(RenderedOutput, PipelineReport), PipelineError> {
        let started = Instant::now();
        let mut trace = vec![Stage::PersonalAgent];
        let request = UserRequest::new(self.ids.next_id(), text, self.clock.now_ms())?;
        let request_id = request.request_id.clone();

        trace.push(Stage::RequestProcessing);
        let query = build_semantic_query(&request, &self.stopwords, &self.lexicon)?;
        tracing::debug!(%request_id, domain = %query.domain, patterns = query.patterns.len(), "request analyzed");

        trace.push(Stage::AgentLocator);
        let agents = self
            .registry
            .locate(&query.domain, &self.required_capabilities, self.clock.now_ms());
        if agents.is_empty() {
            return Err(PipelineError::NoAgentsAvailable {
                request_id,
                domain: query.domain,
            });
        }

        trace.push(Stage::AgentCommunicator);
        let responses = fan_out(&query, &agents, &self.comm).await?;
        let outcomes: BTreeMap<String, Outcome> = responses.iter().map(|r| (r.agent_id.clone(), r.outcome)).collect();

        trace.push(Stage::Database);
        for response in responses {
            self.store.persist(&request_id, response)?;
        }
        if outcomes.values().all(|o| !o.is_ok()) {
            return Err(PipelineError::NoAgentsResponded { request_id, outcomes });
        }

        trace.push(Stage::ListBuilder);
        let stored = self.store.fetch(&request_id)?;
        let results = rank(&stored, &query, &self.weights);
        let ranked_from = stored.iter().map(|r| r.agent_id.clone()).collect();

        trace.push(Stage::ResultGenerator);
        let rendered = render(&request_id, &results, format, &outcomes);

        let report = PipelineReport {
            request_id,
            semantic_query: query,
            agents_located: agents.len(),
            agent_outcomes: outcomes,
            results,
            elapsed_ms: started.elapsed().as_millis() as u64,
            trace,
            ranked_from,
        };
        Ok((rendered, report))
    }
}
