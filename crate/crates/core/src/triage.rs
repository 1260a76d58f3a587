//! Two-stage triage: decide whether a query needs the full council.
//!
//! The client stage is a cheap pattern/length filter. The server stage asks a
//! lightweight model for a binary verdict and, optionally, a direct answer.
//! A query bypasses the council only when both stages call it trivial.

use std::sync::Arc;

use async_trait::async_trait;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dispatch::{count_tokens, AgentError, AgentRequest, ChatMessage, ExpertAgent, GenerationParams, ReasoningLevel, Session};

pub const DEFAULT_MAX_CHARS: usize = 18;
pub const DEFAULT_MAX_TOKENS: usize = 4;
pub const DEFAULT_SERVER_TEMPERATURE: f64 = 0.3;

/// Shipped greeting / acknowledgment / farewell patterns. Each is matched
/// against the whole normalized query, case-insensitively.
pub const DEFAULT_GREETING_PATTERNS: &[&str] = &[
    r"(hi|hello|hey|hiya|howdy|yo)( there)?[!.]*",
    r"good (morning|afternoon|evening|night)[!.]*",
    r"(thanks|thank you|thx|ty|many thanks)( so much| a lot)?[!.]*",
    r"(ok|okay|k|cool|great|nice|got it|sounds good|sure|alright)[!.]*",
    r"(bye|goodbye|see you|see ya|cya|later)[!.]*",
    r"how are you( doing)?[?!.]*",
];

#[derive(Debug, Error)]
pub enum TriageError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid greeting pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageConfig {
    pub greeting_patterns: Vec<String>,
    pub max_chars: usize,
    pub max_tokens: usize,
    pub server_temperature: f64,
    pub short_circuit: bool,
}

impl Default for TriageConfig {
    fn default() -> Self {
        Self {
            greeting_patterns: DEFAULT_GREETING_PATTERNS.iter().map(|s| s.to_string()).collect(),
            max_chars: DEFAULT_MAX_CHARS,
            max_tokens: DEFAULT_MAX_TOKENS,
            server_temperature: DEFAULT_SERVER_TEMPERATURE,
            short_circuit: true,
        }
    }
}

impl TriageConfig {
    pub fn validate(&self) -> Result<(), TriageError> {
        if self.max_chars < 1 || self.max_tokens < 1 {
            return Err(TriageError::InvalidInput("max_chars and max_tokens must be at least 1".into()));
        }
        if self.greeting_patterns.is_empty() {
            return Err(TriageError::InvalidInput("greeting pattern list is empty".into()));
        }
        self.compile().map(|_| ())
    }

    fn compile(&self) -> Result<Vec<Regex>, TriageError> {
        self.greeting_patterns
            .iter()
            .map(|p| {
                RegexBuilder::new(&format!("^(?:{p})$"))
                    .case_insensitive(true)
                    .build()
                    .map_err(|source| TriageError::Pattern { pattern: p.clone(), source })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Trivial,
    Nontrivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageOutcome {
    Bypass,
    Council,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageDecision {
    pub client_verdict: Verdict,
    pub server_verdict: Option<Verdict>,
    pub outcome: TriageOutcome,
    pub direct_answer: Option<String>,
    /// The server stage failed and the decision fell back to council.
    #[serde(default)]
    pub degraded: bool,
}

impl TriageDecision {
    /// Forced council decision, used when triage is skipped entirely.
    pub fn forced_council() -> Self {
        Self {
            client_verdict: Verdict::Nontrivial,
            server_verdict: None,
            outcome: TriageOutcome::Council,
            direct_answer: None,
            degraded: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriageMetrics {
    pub accuracy: f64,
    pub false_bypass_rate: f64,
    pub trivial_fraction: f64,
    pub nontrivial_fraction: f64,
}

/// Lowercases, trims and collapses runs of whitespace.
pub fn normalize_query(query: &str) -> String {
    query.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Client-side stage: trivial iff the normalized query matches a greeting
/// pattern, or it is short in both characters and tokens.
pub fn classify_client(query: &str, cfg: &TriageConfig) -> Result<Verdict, TriageError> {
    let trimmed = query.trim();
    if trimmed.is_empty() {
        return Err(TriageError::InvalidInput("query is empty".into()));
    }
    let normalized = normalize_query(trimmed);
    let patterns = cfg.compile()?;
    if patterns.iter().any(|re| re.is_match(&normalized)) {
        return Ok(Verdict::Trivial);
    }
    let short = trimmed.chars().count() <= cfg.max_chars && count_tokens(trimmed) <= cfg.max_tokens;
    Ok(if short { Verdict::Trivial } else { Verdict::Nontrivial })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerVerdict {
    pub verdict: Verdict,
    pub direct_answer: Option<String>,
}

/// Server-side stage of triage.
#[async_trait]
pub trait ServerClassifier: Send + Sync {
    async fn classify(&self, query: &str, history: &Session) -> Result<ServerVerdict, AgentError>;
}

const CLASSIFIER_INSTRUCTIONS: &str = "Decide whether the user message needs a multi-expert deliberation. \
Reply with a first line `verdict: trivial` or `verdict: nontrivial`. \
For trivial messages you may add a second line `answer: <short direct reply>`.";

/// Server classifier backed by any chat agent, run with minimal reasoning at
/// the configured temperature.
pub struct AgentClassifier {
    agent: Arc<dyn ExpertAgent>,
    temperature: f64,
}

impl AgentClassifier {
    pub fn new(agent: Arc<dyn ExpertAgent>, cfg: &TriageConfig) -> Self {
        Self { agent, temperature: cfg.server_temperature }
    }
}

/// Parses a classifier reply of the form `verdict: ...` / `answer: ...`.
pub fn parse_classifier_reply(reply: &str) -> Result<ServerVerdict, AgentError> {
    let mut verdict = None;
    let mut answer: Option<String> = None;
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim().to_ascii_lowercase(), v.trim()),
            None => continue,
        };
        match key.as_str() {
            "verdict" => {
                verdict = match value.to_ascii_lowercase().as_str() {
                    "trivial" => Some(Verdict::Trivial),
                    "nontrivial" | "non-trivial" => Some(Verdict::Nontrivial),
                    other => return Err(AgentError::Malformed(format!("unknown verdict {other:?}"))),
                }
            }
            "answer" if !value.is_empty() => answer = Some(value.to_string()),
            _ => {}
        }
    }
    let verdict = verdict.ok_or_else(|| AgentError::Malformed("classifier reply has no verdict line".into()))?;
    Ok(ServerVerdict { direct_answer: if verdict == Verdict::Trivial { answer } else { None }, verdict })
}

#[async_trait]
impl ServerClassifier for AgentClassifier {
    async fn classify(&self, query: &str, history: &Session) -> Result<ServerVerdict, AgentError> {
        let mut messages = vec![ChatMessage::system(CLASSIFIER_INSTRUCTIONS)];
        messages.extend(history.turns.iter().cloned());
        messages.push(ChatMessage::user(query));
        let params = GenerationParams {
            temperature: self.temperature,
            top_p: 1.0,
            max_new_tokens: 256,
            reasoning_level: ReasoningLevel::Minimal,
        };
        let reply = self.agent.generate(&AgentRequest { messages, params }, None).await?;
        parse_classifier_reply(&reply)
    }
}

/// Full triage: client stage, then (unless short-circuited) the server
/// stage. Any server failure degrades to council.
pub async fn triage_query(
    query: &str,
    history: &Session,
    cfg: &TriageConfig,
    server: &dyn ServerClassifier,
) -> Result<TriageDecision, TriageError> {
    let client_verdict = classify_client(query, cfg)?;
    if cfg.short_circuit && client_verdict == Verdict::Nontrivial {
        return Ok(TriageDecision {
            client_verdict,
            server_verdict: None,
            outcome: TriageOutcome::Council,
            direct_answer: None,
            degraded: false,
        });
    }
    match server.classify(query.trim(), history).await {
        Ok(server_verdict) => {
            let bypass = client_verdict == Verdict::Trivial && server_verdict.verdict == Verdict::Trivial;
            Ok(TriageDecision {
                client_verdict,
                server_verdict: Some(server_verdict.verdict),
                outcome: if bypass { TriageOutcome::Bypass } else { TriageOutcome::Council },
                direct_answer: if bypass { server_verdict.direct_answer } else { None },
                degraded: false,
            })
        }
        Err(err) => {
            tracing::warn!(error = %err, "server classifier failed, routing to council");
            Ok(TriageDecision {
                client_verdict,
                server_verdict: None,
                outcome: TriageOutcome::Council,
                direct_answer: None,
                degraded: true,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query: String,
    pub gold: Verdict,
}

/// Runs triage over a labeled set and scores it. Fractions are over the
/// predicted outcomes; a false bypass is a bypassed query whose gold label is
/// nontrivial.
pub async fn evaluate_triage(
    labeled: &[LabeledQuery],
    cfg: &TriageConfig,
    server: &dyn ServerClassifier,
) -> Result<TriageMetrics, TriageError> {
    if labeled.is_empty() {
        return Err(TriageError::InvalidInput("labeled set is empty".into()));
    }
    let history = Session::new();
    let (mut correct, mut false_bypass, mut bypassed) = (0usize, 0usize, 0usize);
    for item in labeled {
        let decision = triage_query(&item.query, &history, cfg, server).await?;
        let predicted = match decision.outcome {
            TriageOutcome::Bypass => Verdict::Trivial,
            TriageOutcome::Council => Verdict::Nontrivial,
        };
        if predicted == item.gold {
            correct += 1;
        }
        if decision.outcome == TriageOutcome::Bypass {
            bypassed += 1;
            if item.gold == Verdict::Nontrivial {
                false_bypass += 1;
            }
        }
    }
    let total = labeled.len() as f64;
    Ok(TriageMetrics {
        accuracy: correct as f64 / total,
        false_bypass_rate: false_bypass as f64 / total,
        trivial_fraction: bypassed as f64 / total,
        nontrivial_fraction: (labeled.len() - bypassed) as f64 / total,
    })
}

/// Heuristic offline classifier: calls a query trivial unless it asks
/// something (question mark or an interrogative/imperative keyword).
#[derive(Debug, Clone, Default)]
pub struct KeywordClassifier;

const ASKING_WORDS: &[&str] = &[
    "what", "why", "how", "when", "where", "who", "which", "explain", "define", "compare", "list", "describe",
    "summarize", "prove", "calculate", "should", "can", "is", "are", "does",
];

#[async_trait]
impl ServerClassifier for KeywordClassifier {
    async fn classify(&self, query: &str, _history: &Session) -> Result<ServerVerdict, AgentError> {
        let normalized = normalize_query(query);
        let asks = normalized.contains('?')
            || normalized
                .split(|c: char| !c.is_alphanumeric())
                .any(|w| ASKING_WORDS.contains(&w));
        Ok(if asks {
            ServerVerdict { verdict: Verdict::Nontrivial, direct_answer: None }
        } else {
            ServerVerdict { verdict: Verdict::Trivial, direct_answer: Some(format!("Noted: {}", query.trim())) }
        })
    }
}

const SYNTH_GREETINGS: &[&str] = &["hi", "hello!", "Hey there", "thanks", "Thank you so much", "ok", "bye", "good morning", "cool"];
const SYNTH_SHORT_TRIVIAL: &[&str] = &["sounds great to me", "see you tomorrow", "nice work", "all good here", "love it"];
const SYNTH_SHORT_NONTRIVIAL: &[&str] = &["capital of peru", "boiling point of ethanol", "gdp of chile 2020", "inventor of radar", "pi to ten digits"];
const SYNTH_TOPICS: &[&str] = &[
    "monetary policy", "protein folding", "the French revolution", "transformer attention", "drug interactions",
    "contract law", "plate tectonics", "quantum error correction", "supply chain risk", "renal physiology",
];
const SYNTH_TEMPLATES: &[&str] = &[
    "Explain how {} affects long-term outcomes and compare the main competing theories.",
    "What are the strongest arguments for and against current thinking on {}?",
    "Summarize the key open problems in {} and why they remain unsolved",
    "Walk me through a worked example involving {} step by step.",
];

/// Seeded synthetic labeled set mixing greetings, short chit-chat, short
/// factual lookups (labeled nontrivial) and long analytical questions.
pub fn synthetic_labeled_set(n: usize, seed: u64) -> Vec<LabeledQuery> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let roll: f64 = rng.random();
            if roll < 0.25 {
                LabeledQuery { query: SYNTH_GREETINGS.choose(&mut rng).unwrap().to_string(), gold: Verdict::Trivial }
            } else if roll < 0.35 {
                LabeledQuery { query: SYNTH_SHORT_TRIVIAL.choose(&mut rng).unwrap().to_string(), gold: Verdict::Trivial }
            } else if roll < 0.40 {
                LabeledQuery { query: SYNTH_SHORT_NONTRIVIAL.choose(&mut rng).unwrap().to_string(), gold: Verdict::Nontrivial }
            } else {
                let topic = SYNTH_TOPICS.choose(&mut rng).unwrap();
                let template = SYNTH_TEMPLATES.choose(&mut rng).unwrap();
                LabeledQuery { query: template.replace("{}", topic), gold: Verdict::Nontrivial }
            }
        })
        .collect()
}
