//! Council consensus engine.
//!
//! A query first passes a two-stage triage. Trivial queries are answered
//! directly; everything else is fanned out to a set of heterogeneous expert
//! agents in parallel, the responses are decomposed into claims, bucketed by
//! how many experts support each claim, scanned for cross-expert
//! contradictions, and handed to a synthesis agent that writes a five-section
//! report.
//!
//! Alongside the pipeline the crate ships the analysis toolkit used to reason
//! about it: a latent shared-failure simulator for correlated expert errors
//! ([`errorsim`]), the statistical kernels of the evaluation protocol and the
//! cost arithmetic ([`stats`]).

pub mod api;
pub mod config;
pub mod consensus;
pub mod dispatch;
pub mod errorsim;
pub mod events;
pub mod stats;
pub mod transcript;
pub mod triage;

pub use config::{CouncilConfig, Preset};
pub use consensus::council::{run_council, Council, CouncilFailure, CouncilResult};
pub use dispatch::{ExpertAgent, ExpertOutcome, ExpertResponse, ExpertSpec, Session};
pub use events::{stream_council, EventKind, SseEvent};
