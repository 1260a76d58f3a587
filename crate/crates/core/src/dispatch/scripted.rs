//! Scripted agents: deterministic stand-ins for remote providers.

use std::collections::BTreeMap;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{AgentError, AgentRequest, DeltaFn, DispatchError, ExpertAgent, ExpertSpec};

/// Upper bound on the number of deltas a scripted reply is streamed in.
const MAX_DELTAS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStatus {
    Success,
    Timeout,
    ProviderError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub text: String,
    pub latency_secs: f64,
    pub status: ScriptStatus,
}

impl ScriptEntry {
    pub fn ok(text: impl Into<String>, latency_secs: f64) -> Self {
        Self { text: text.into(), latency_secs, status: ScriptStatus::Success }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScriptMode {
    /// Unknown queries fail with [`AgentError::ScriptMiss`].
    Strict,
    /// Unknown queries get the fallback entry.
    Lenient(ScriptEntry),
}

/// Replies from a fixed query → entry table after sleeping the scripted
/// latency. Keys are matched against the trimmed final user message.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    spec: ExpertSpec,
    script: BTreeMap<String, ScriptEntry>,
    mode: ScriptMode,
}

/// Builds a strict scripted agent. The script must have at least one entry.
pub fn scripted_expert(spec: ExpertSpec, script: BTreeMap<String, ScriptEntry>) -> Result<ScriptedExpert, DispatchError> {
    ScriptedExpert::new(spec, script, ScriptMode::Strict)
}

impl ScriptedExpert {
    pub fn new(spec: ExpertSpec, script: BTreeMap<String, ScriptEntry>, mode: ScriptMode) -> Result<Self, DispatchError> {
        if script.is_empty() && mode == ScriptMode::Strict {
            return Err(DispatchError::InvalidInput("strict script needs at least one entry".into()));
        }
        for (key, entry) in &script {
            if !entry.latency_secs.is_finite() || entry.latency_secs < 0.0 {
                return Err(DispatchError::InvalidInput(format!("negative latency for {key:?}")));
            }
        }
        Ok(Self { spec, script, mode })
    }

    /// An agent that answers every query with `fallback`.
    pub fn lenient(spec: ExpertSpec, fallback: ScriptEntry) -> Self {
        Self { spec, script: BTreeMap::new(), mode: ScriptMode::Lenient(fallback) }
    }

    pub fn with_entry(mut self, key: impl Into<String>, entry: ScriptEntry) -> Self {
        self.script.insert(key.into(), entry);
        self
    }

    fn lookup(&self, query: &str) -> Result<&ScriptEntry, AgentError> {
        match self.script.get(query.trim()) {
            Some(entry) => Ok(entry),
            None => match &self.mode {
                ScriptMode::Lenient(fallback) => Ok(fallback),
                ScriptMode::Strict => Err(AgentError::ScriptMiss(query.trim().to_string())),
            },
        }
    }
}

/// Splits `text` into at most `max` pieces whose concatenation is `text`.
pub(crate) fn delta_chunks(text: &str, max: usize) -> Vec<&str> {
    let words: Vec<&str> = text.split_inclusive(char::is_whitespace).collect();
    if words.is_empty() {
        return Vec::new();
    }
    let per_chunk = words.len().div_ceil(max.max(1));
    let mut chunks = Vec::new();
    let mut start = 0;
    for group in words.chunks(per_chunk) {
        let len: usize = group.iter().map(|w| w.len()).sum();
        chunks.push(&text[start..start + len]);
        start += len;
    }
    chunks
}

/// Sleeps `latency` in total while emitting `text` piecewise; used by the
/// scripted and mock agents.
pub(crate) async fn stream_with_latency(text: &str, latency: f64, on_delta: Option<DeltaFn<'_>>) {
    let chunks = delta_chunks(text, MAX_DELTAS);
    if chunks.is_empty() {
        tokio::time::sleep(Duration::from_secs_f64(latency)).await;
        return;
    }
    let step = Duration::from_secs_f64(latency / chunks.len() as f64);
    for chunk in chunks {
        tokio::time::sleep(step).await;
        if let Some(emit) = on_delta {
            emit(chunk);
        }
    }
}

#[async_trait]
impl ExpertAgent for ScriptedExpert {
    fn spec(&self) -> &ExpertSpec {
        &self.spec
    }

    async fn generate(&self, request: &AgentRequest, on_delta: Option<DeltaFn<'_>>) -> Result<String, AgentError> {
        let entry = self.lookup(request.query())?.clone();
        match entry.status {
            ScriptStatus::Success => {
                stream_with_latency(&entry.text, entry.latency_secs, on_delta).await;
                Ok(entry.text)
            }
            ScriptStatus::Timeout => {
                tokio::time::sleep(Duration::from_secs_f64(entry.latency_secs)).await;
                Err(AgentError::Timeout)
            }
            ScriptStatus::ProviderError => {
                tokio::time::sleep(Duration::from_secs_f64(entry.latency_secs)).await;
                Err(AgentError::Provider(format!("scripted failure from {}", self.spec.expert_id)))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::GenerationParams;
    use std::sync::Mutex;
    use tokio::time::Instant;

    fn spec() -> ExpertSpec {
        ExpertSpec::new("s", "mock", "scripted")
    }

    fn req(q: &str) -> AgentRequest {
        AgentRequest::single(q, GenerationParams::default())
    }

    #[tokio::test(start_paused = true)]
    async fn strict_hit_and_miss() {
        let agent = scripted_expert(spec(), BTreeMap::from([("q1".to_string(), ScriptEntry::ok("A", 0.1))])).unwrap();
        assert_eq!(agent.generate(&req("q1"), None).await.unwrap(), "A");
        assert_eq!(agent.generate(&req("  q1 "), None).await.unwrap(), "A");
        assert_eq!(agent.generate(&req("q2"), None).await, Err(AgentError::ScriptMiss("q2".into())));
    }

    #[tokio::test(start_paused = true)]
    async fn lenient_fallback() {
        let agent = ScriptedExpert::lenient(spec(), ScriptEntry::ok("fallback text", 0.0))
            .with_entry("known", ScriptEntry::ok("K", 0.0));
        assert_eq!(agent.generate(&req("known"), None).await.unwrap(), "K");
        assert_eq!(agent.generate(&req("whatever"), None).await.unwrap(), "fallback text");
    }

    #[test]
    fn empty_strict_script_rejected() {
        assert!(scripted_expert(spec(), BTreeMap::new()).is_err());
    }

    #[tokio::test]
    async fn measured_latency_within_ten_percent() {
        let agent = ScriptedExpert::lenient(spec(), ScriptEntry::ok("some words to stream out", 2.0));
        let start = Instant::now();
        agent.generate(&req("x"), None).await.unwrap();
        let took = start.elapsed().as_secs_f64();
        assert!((1.8..=2.2).contains(&took), "took {took}");
    }

    #[tokio::test(start_paused = true)]
    async fn deltas_concatenate_to_reply() {
        let text = "Paris is in France.  The Seine flows through it.\nIt has   many bridges and a long history of art";
        let agent = ScriptedExpert::lenient(spec(), ScriptEntry::ok(text, 1.0));
        let seen = Mutex::new(String::new());
        let sink = |d: &str| seen.lock().unwrap().push_str(d);
        let out = agent.generate(&req("x"), Some(&sink)).await.unwrap();
        assert_eq!(out, text);
        assert_eq!(seen.into_inner().unwrap(), text);
        assert!(delta_chunks(text, 8).len() <= 8);
    }

    #[tokio::test(start_paused = true)]
    async fn scripted_failures() {
        let agent = ScriptedExpert::lenient(
            spec(),
            ScriptEntry { text: String::new(), latency_secs: 0.5, status: ScriptStatus::Timeout },
        );
        assert_eq!(agent.generate(&req("x"), None).await, Err(AgentError::Timeout));
    }
}
