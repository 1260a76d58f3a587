//! Parallel fan-out of a query to heterogeneous expert agents.
//!
//! Every expert call runs concurrently, so the wall time of a dispatch is
//! bounded by the slowest expert, not by the sum of their latencies. A
//! per-expert timeout turns a stalled expert into a `timeout` outcome without
//! disturbing its siblings.

pub mod mock;
pub mod remote;
pub mod scripted;

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use futures::future::join_all;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::time::Instant;

pub use scripted::{scripted_expert, ScriptEntry, ScriptMode, ScriptStatus, ScriptedExpert};

/// Default per-expert timeout.
pub const DEFAULT_EXPERT_TIMEOUT: Duration = Duration::from_secs(60);

/// Default minimum number of successful experts needed to synthesize.
pub const DEFAULT_MIN_SUCCESS: usize = 2;

#[derive(Debug, Error)]
pub enum DispatchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AgentError {
    #[error("agent timed out")]
    Timeout,
    #[error("provider error: {0}")]
    Provider(String),
    #[error("no scripted response for query {0:?}")]
    ScriptMiss(String),
    #[error("malformed agent reply: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("quorum not reached: {successes} of {required} required experts succeeded (failed: {})", failed.join(", "))]
pub struct QuorumError {
    pub successes: usize,
    pub required: usize,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasoningLevel {
    Minimal,
    Default,
    High,
    Maximum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub reasoning_level: ReasoningLevel,
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), DispatchError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(DispatchError::InvalidInput(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(DispatchError::InvalidInput(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_new_tokens == 0 {
            return Err(DispatchError::InvalidInput("max_new_tokens must be positive".into()));
        }
        Ok(())
    }
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.5, top_p: 0.95, max_new_tokens: 4096, reasoning_level: ReasoningLevel::High }
    }
}

/// Static description of one expert: who serves it and how it is sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSpec {
    pub expert_id: String,
    pub provider: String,
    pub model_id: String,
    /// Context window granted to this expert, in tokens.
    pub context_budget: u64,
    pub generation: GenerationParams,
    #[serde(default)]
    pub web_enabled: bool,
    /// Chat-completions endpoint for remote agents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Environment variable holding the provider credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
}

impl ExpertSpec {
    pub fn new(expert_id: impl Into<String>, provider: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            expert_id: expert_id.into(),
            provider: provider.into(),
            model_id: model_id.into(),
            context_budget: 200_000,
            generation: GenerationParams::default(),
            web_enabled: false,
            endpoint: None,
            api_key_env: None,
        }
    }

    pub fn validate(&self) -> Result<(), DispatchError> {
        if self.expert_id.trim().is_empty() {
            return Err(DispatchError::InvalidInput("expert_id must be non-empty".into()));
        }
        if self.context_budget == 0 {
            return Err(DispatchError::InvalidInput(format!(
                "expert {} has a zero context budget",
                self.expert_id
            )));
        }
        self.generation.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
}

/// Conversation history preceding the current query.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    #[serde(default)]
    pub turns: Vec<ChatMessage>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: ChatMessage) {
        self.turns.push(message);
    }
}

/// Whitespace-delimited token count. Used for triage thresholds and context
/// budgeting alike, so both agree on what a "token" is.
pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRequest {
    pub messages: Vec<ChatMessage>,
    pub params: GenerationParams,
}

impl AgentRequest {
    /// Content of the final user message, which is what scripted agents key on.
    pub fn query(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    pub fn single(prompt: impl Into<String>, params: GenerationParams) -> Self {
        Self { messages: vec![ChatMessage::user(prompt)], params }
    }
}

/// Builds the request an expert sees for `query`, dropping the oldest history
/// turns until the whole conversation fits the expert's context budget. The
/// query itself is never dropped.
pub fn build_request(query: &str, history: &Session, spec: &ExpertSpec) -> AgentRequest {
    let budget = spec.context_budget as usize;
    let query_tokens = count_tokens(query);
    let mut kept: Vec<&ChatMessage> = Vec::new();
    let mut used = query_tokens;
    for turn in history.turns.iter().rev() {
        let cost = count_tokens(&turn.content);
        if used + cost > budget {
            break;
        }
        used += cost;
        kept.push(turn);
    }
    kept.reverse();
    let mut messages: Vec<ChatMessage> = kept.into_iter().cloned().collect();
    messages.push(ChatMessage::user(query));
    AgentRequest { messages, params: spec.generation.clone() }
}

/// Callback receiving incremental text from an agent.
pub type DeltaFn<'a> = &'a (dyn Fn(&str) + Send + Sync);

/// Anything that can answer a chat request: remote providers, scripted
/// fixtures, deterministic mocks. Implementations must tolerate concurrent
/// invocation.
#[async_trait]
pub trait ExpertAgent: Send + Sync {
    fn spec(&self) -> &ExpertSpec;

    fn id(&self) -> &str {
        &self.spec().expert_id
    }

    /// Produces the full reply. When `on_delta` is given, the reply text is
    /// also reported piecewise as it becomes available; the concatenation of
    /// all deltas equals the returned text.
    async fn generate(&self, request: &AgentRequest, on_delta: Option<DeltaFn<'_>>) -> Result<String, AgentError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertResponse {
    pub expert_id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Success,
    Timeout,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertOutcome {
    pub expert_id: String,
    pub status: OutcomeStatus,
    pub response: Option<ExpertResponse>,
    /// Seconds from dispatch to completion (or to the timeout firing).
    pub latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ExpertOutcome {
    pub fn success(expert_id: &str, text: String, latency: f64) -> Self {
        Self {
            expert_id: expert_id.to_string(),
            status: OutcomeStatus::Success,
            response: Some(ExpertResponse { expert_id: expert_id.to_string(), text }),
            latency,
            error: None,
        }
    }

    pub fn failure(expert_id: &str, status: OutcomeStatus, error: String, latency: f64) -> Self {
        debug_assert_ne!(status, OutcomeStatus::Success);
        Self { expert_id: expert_id.to_string(), status, response: None, latency, error: Some(error) }
    }

    pub fn is_success(&self) -> bool {
        self.status == OutcomeStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub expert_latencies: std::collections::BTreeMap<String, f64>,
    pub synthesis_latency: f64,
    pub total: f64,
}

impl LatencyBreakdown {
    pub fn slowest_expert(&self) -> f64 {
        self.expert_latencies.values().copied().fold(0.0, f64::max)
    }
}

/// Receives progress notifications from [`dispatch_parallel`].
pub trait DispatchObserver: Send + Sync {
    fn expert_started(&self, _expert_id: &str) {}
    fn expert_delta(&self, _expert_id: &str, _delta: &str) {}
    fn expert_finished(&self, _outcome: &ExpertOutcome) {}
}

impl DispatchObserver for () {}

/// Sends `query` to every expert concurrently and waits for all of them.
///
/// Outcomes come back in expert order. An expert exceeding `timeout` yields a
/// `timeout` outcome; an agent error yields `provider_error`. Neither affects
/// the other experts. Deciding whether enough experts succeeded is left to
/// [`collect_quorum`].
pub async fn dispatch_parallel(
    query: &str,
    history: &Session,
    experts: &[Arc<dyn ExpertAgent>],
    timeout: Duration,
    observer: &dyn DispatchObserver,
) -> Result<Vec<ExpertOutcome>, DispatchError> {
    if experts.is_empty() {
        return Err(DispatchError::InvalidInput("no experts to dispatch to".into()));
    }
    if timeout.is_zero() {
        return Err(DispatchError::InvalidInput("timeout must be positive".into()));
    }
    let mut seen = BTreeSet::new();
    for expert in experts {
        if !seen.insert(expert.id()) {
            return Err(DispatchError::InvalidInput(format!("duplicate expert id {}", expert.id())));
        }
    }

    let calls = experts.iter().map(|expert| {
        let request = build_request(query, history, expert.spec());
        async move {
            let id = expert.id().to_string();
            observer.expert_started(&id);
            let started = Instant::now();
            let on_delta = |delta: &str| observer.expert_delta(&id, delta);
            let result = tokio::time::timeout(timeout, expert.generate(&request, Some(&on_delta))).await;
            let latency = started.elapsed().as_secs_f64();
            let outcome = match result {
                Ok(Ok(text)) => ExpertOutcome::success(&id, text, latency),
                Ok(Err(AgentError::Timeout)) => {
                    ExpertOutcome::failure(&id, OutcomeStatus::Timeout, AgentError::Timeout.to_string(), latency)
                }
                Ok(Err(err)) => ExpertOutcome::failure(&id, OutcomeStatus::ProviderError, err.to_string(), latency),
                Err(_) => ExpertOutcome::failure(
                    &id,
                    OutcomeStatus::Timeout,
                    format!("no reply within {:.3}s", timeout.as_secs_f64()),
                    latency,
                ),
            };
            observer.expert_finished(&outcome);
            outcome
        }
    });
    Ok(join_all(calls).await)
}

/// Keeps the successful responses if at least `min_success` experts answered.
/// The number of responses returned is the effective expert count for claim
/// partitioning.
pub fn collect_quorum(outcomes: &[ExpertOutcome], min_success: usize) -> Result<Vec<ExpertResponse>, QuorumError> {
    let min_success = min_success.max(1);
    let responses: Vec<ExpertResponse> = outcomes.iter().filter_map(|o| o.response.clone()).collect();
    if responses.len() < min_success {
        return Err(QuorumError {
            successes: responses.len(),
            required: min_success,
            failed: outcomes.iter().filter(|o| !o.is_success()).map(|o| o.expert_id.clone()).collect(),
        });
    }
    Ok(responses)
}
