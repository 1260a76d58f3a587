//! Deterministic offline agents for `--mock` runs and end-to-end fixtures.
//!
//! [`MockExpert`] invents a small set of numeric "facts" about the query,
//! seeded by (seed, query, expert). Experts usually agree, occasionally
//! omit a fact or report a different value, which yields consensus,
//! partial, unique and contradictory claims downstream.
//! [`EchoSynthesizer`] reads the claim groups back out of the synthesis
//! prompt and writes them under the five section headers.

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scripted::stream_with_latency;
use super::{AgentError, AgentRequest, DeltaFn, ExpertAgent, ExpertSpec};
use crate::consensus::prompt::{prompt_groups, EMPTY_MARKER};

const FACTS_PER_QUERY: u64 = 5;

/// FNV-1a over the given parts, separated so that ("ab","c") != ("a","bc").
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in part.iter().chain(std::iter::once(&0xffu8)) {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSettings {
    pub latency_min_secs: f64,
    pub latency_max_secs: f64,
    pub synthesis_latency_secs: f64,
    /// Probability an expert leaves out a given fact.
    pub omission_rate: f64,
    /// Probability an expert reports a different value for a given fact.
    pub deviation_rate: f64,
}

impl Default for MockSettings {
    fn default() -> Self {
        Self { latency_min_secs: 0.2, latency_max_secs: 0.8, synthesis_latency_secs: 0.3, omission_rate: 0.25, deviation_rate: 0.15 }
    }
}

fn topic_of(query: &str) -> String {
    let words: Vec<String> = query
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| w.len() > 3)
        .take(3)
        .map(str::to_lowercase)
        .collect();
    if words.is_empty() {
        "query".to_string()
    } else {
        words.join(" ")
    }
}

pub struct MockExpert {
    spec: ExpertSpec,
    seed: u64,
    settings: MockSettings,
}

impl MockExpert {
    pub fn new(spec: ExpertSpec, seed: u64, settings: MockSettings) -> Self {
        Self { spec, seed, settings }
    }

    /// The reply text and simulated latency for `query`.
    pub fn script_for(&self, query: &str) -> (String, f64) {
        let seed = self.seed.to_le_bytes();
        let topic = topic_of(query);
        let shared = stable_hash(&[&seed, query.as_bytes()]);
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash(&[&seed, query.as_bytes(), self.spec.expert_id.as_bytes()]));

        let mut sentences = Vec::new();
        let mut answer = None;
        for j in 0..FACTS_PER_QUERY {
            let true_value = 10 + (shared.rotate_left(7 * j as u32) % 90);
            let omitted = j > 0 && rng.random_bool(self.settings.omission_rate);
            let deviates = rng.random_bool(self.settings.deviation_rate);
            let value = if deviates { true_value + rng.random_range(1..6) } else { true_value };
            if j == 0 {
                answer = Some(value);
            }
            if !omitted {
                sentences.push(format!("The {topic} indicator {j} is {value}."));
            }
        }
        let aspect = rng.random_range(1..1000);
        sentences.push(format!("{} also flags aspect {aspect} of the {topic}.", self.spec.model_id));
        let mut text = sentences.join(" ");
        text.push_str(&format!("\nAnswer: {}", answer.unwrap_or_default()));

        let (lo, hi) = (self.settings.latency_min_secs, self.settings.latency_max_secs.max(self.settings.latency_min_secs));
        let latency = lo + (hi - lo) * rng.random::<f64>();
        (text, latency)
    }
}

#[async_trait]
impl ExpertAgent for MockExpert {
    fn spec(&self) -> &ExpertSpec {
        &self.spec
    }

    async fn generate(&self, request: &AgentRequest, on_delta: Option<DeltaFn<'_>>) -> Result<String, AgentError> {
        let (text, latency) = self.script_for(request.query().trim());
        stream_with_latency(&text, latency, on_delta).await;
        Ok(text)
    }
}

/// Synthesizer that restates the prompt's claim groups under the required
/// headers and adds a short templated analysis.
pub struct EchoSynthesizer {
    spec: ExpertSpec,
    headers: [String; 5],
    latency_secs: f64,
}

impl EchoSynthesizer {
    pub fn new(spec: ExpertSpec, headers: [String; 5], latency_secs: f64) -> Self {
        Self { spec, headers, latency_secs }
    }

    pub fn render(&self, prompt: &str) -> String {
        let groups = prompt_groups(prompt);
        let real = |g: &Vec<String>| g.iter().filter(|l| l.as_str() != EMPTY_MARKER).count();
        let mut out = String::new();
        for (header, lines) in self.headers.iter().take(4).zip(groups.iter()) {
            out.push_str(&format!("## {header}\n"));
            if real(lines) == 0 {
                out.push_str(EMPTY_MARKER);
                out.push('\n');
            } else {
                for line in lines {
                    out.push_str(&format!("- {line}\n"));
                }
            }
            out.push('\n');
        }
        out.push_str(&format!("## {}\n", self.headers[4]));
        let lead = groups[0]
            .iter()
            .find(|l| l.as_str() != EMPTY_MARKER)
            .map(|l| {
                let statement = l.split_once("] ").map(|(_, rest)| rest).unwrap_or(l);
                let statement = statement.rsplit_once(" (experts:").map(|(s, _)| s).unwrap_or(statement);
                let mut chars = statement.trim_end_matches('.').chars();
                let first = chars.next().map(|c| c.to_lowercase().collect::<String>()).unwrap_or_default();
                format!("All experts agree that {first}{}", chars.as_str())
            })
            .unwrap_or_else(|| "No claim was shared by every expert".to_string());
        out.push_str(&format!(
            "{lead}. The council produced {} consensus, {} partial and {} unique claims, with {} contradictions flagged.\n",
            real(&groups[0]),
            real(&groups[1]),
            real(&groups[3]),
            real(&groups[2])
        ));
        out
    }
}

#[async_trait]
impl ExpertAgent for EchoSynthesizer {
    fn spec(&self) -> &ExpertSpec {
        &self.spec
    }

    async fn generate(&self, request: &AgentRequest, on_delta: Option<DeltaFn<'_>>) -> Result<String, AgentError> {
        let text = self.render(request.query());
        stream_with_latency(&text, self.latency_secs, on_delta).await;
        Ok(text)
    }
}
