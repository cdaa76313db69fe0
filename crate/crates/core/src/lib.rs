//! Agent-based semantic search broker.
//!
//! A full-text request flows through a fixed pipeline of processing units:
//!
//! ```text
//! personal agent -> request processing -> agent locator -> agent communicator
//!     -> result store -> list builder -> result generator -> personal agent
//! ```
//!
//! Each unit lives in its own module. Domain agents are simulated in
//! [`sim`]: they serve a triple knowledge base over the framed wire protocol
//! in [`comm`] and self-register with the [`registry`].

pub mod broker;
pub mod clock;
pub mod comm;
pub mod config;
pub mod personal;
pub mod rank;
pub mod registry;
pub mod render;
pub mod request;
pub mod sim;
pub mod store;

pub use clock::{Clock, ManualClock, SystemClock};
pub use comm::{AgentResponse, Message, Outcome, ResultItem};
pub use personal::{PersonalAgent, PipelineError, PipelineReport, Stage};
pub use rank::{RankWeights, RankedResult};
pub use registry::{AgentDescriptor, AgentRegistry};
pub use render::{Format, RenderedOutput};
pub use request::{SemanticQuery, Term, TriplePattern, UserRequest};
pub use store::ResultStore;
