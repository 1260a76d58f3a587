use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::ConsensusError;
use crate::dispatch::{AgentRequest, ChatMessage, ExpertAgent, ExpertResponse, GenerationParams, ReasoningLevel};

/// Byte range of a claim inside its source response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    /// `<expert_id>#<index>`, unique within a council run.
    pub claim_id: String,
    pub statement: String,
    pub source_expert: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<ClaimSpan>,
}

impl Claim {
    pub fn new(claim_id: impl Into<String>, statement: impl Into<String>, source_expert: impl Into<String>) -> Self {
        Self { claim_id: claim_id.into(), statement: statement.into(), source_expert: source_expert.into(), span: None }
    }

    pub fn normalized(&self) -> String {
        normalize_statement(&self.statement)
    }
}

/// Case, whitespace and punctuation folding used for exact claim identity.
pub fn normalize_statement(text: &str) -> String {
    let folded: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    folded.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Produces raw claims from one response. Ids and source experts are filled
/// in by [`extract_claims`], so implementations only need statements (and
/// spans, if they know them).
#[async_trait]
pub trait ClaimExtractor: Send + Sync {
    async fn extract(&self, response: &ExpertResponse) -> Result<Vec<Claim>, ConsensusError>;
}

pub async fn extract_claims(response: &ExpertResponse, extractor: &dyn ClaimExtractor) -> Result<Vec<Claim>, ConsensusError> {
    let raw = extractor.extract(response).await.map_err(|e| match e {
        ConsensusError::Extraction { .. } => e,
        other => ConsensusError::Extraction { expert_id: response.expert_id.clone(), reason: other.to_string() },
    })?;
    Ok(raw
        .into_iter()
        .filter(|c| !c.statement.trim().is_empty())
        .enumerate()
        .map(|(i, c)| Claim {
            claim_id: format!("{}#{}", response.expert_id, i + 1),
            statement: c.statement,
            source_expert: response.expert_id.clone(),
            span: c.span,
        })
        .collect())
}

/// Reference extractor: one claim per declarative sentence.
///
/// Sentences end at `.`/`!` followed by whitespace or end of text, and at
/// line breaks. Questions, headings and fragments without any letters or
/// digits are dropped; list markers are stripped.
#[derive(Debug, Clone, Copy, Default)]
pub struct SentenceExtractor;

impl SentenceExtractor {
    pub fn segment(text: &str) -> Vec<(String, ClaimSpan)> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            let next_is_break = chars.peek().is_none_or(|&(_, n)| n.is_whitespace());
            let end = match c {
                '\n' => Some(i),
                '.' if next_is_break && is_list_number(&text[start..i]) => None,
                '.' | '!' | '?' if next_is_break => Some(i + c.len_utf8()),
                _ => None,
            };
            if let Some(end) = end {
                push_sentence(text, start, end, &mut out);
                start = end;
            }
        }
        push_sentence(text, start, text.len(), &mut out);
        out
    }
}

fn is_list_number(prefix: &str) -> bool {
    let p = prefix.trim();
    !p.is_empty() && p.len() <= 3 && p.chars().all(|c| c.is_ascii_digit())
}

fn push_sentence(text: &str, start: usize, end: usize, out: &mut Vec<(String, ClaimSpan)>) {
    let raw = &text[start..end];
    let lead = raw.len() - raw.trim_start().len();
    let mut body = raw.trim();
    let mut offset = start + lead;
    if body.starts_with('#') || body.ends_with('?') {
        return;
    }
    for marker in ["- ", "* ", "• "] {
        if let Some(rest) = body.strip_prefix(marker) {
            offset += marker.len();
            body = rest.trim_start();
        }
    }
    if let Some(pos) = body.find(". ") {
        if pos <= 3 && body[..pos].chars().all(|c| c.is_ascii_digit()) && pos > 0 {
            offset += pos + 2;
            body = &body[pos + 2..];
        }
    }
    let body_trimmed = body.trim_start();
    offset += body.len() - body_trimmed.len();
    if !body_trimmed.chars().any(char::is_alphanumeric) {
        return;
    }
    let statement = body_trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    out.push((statement, ClaimSpan { start: offset, end: offset + body_trimmed.len() }));
}

#[async_trait]
impl ClaimExtractor for SentenceExtractor {
    async fn extract(&self, response: &ExpertResponse) -> Result<Vec<Claim>, ConsensusError> {
        Ok(Self::segment(&response.text)
            .into_iter()
            .map(|(statement, span)| Claim { span: Some(span), ..Claim::new("", statement, &response.expert_id) })
            .collect())
    }
}

const EXTRACTOR_INSTRUCTIONS: &str = "List every atomic factual claim made in the following response. \
Write one claim per line, each line starting with `- `. Do not add claims that are not in the response.";

/// Delegates extraction to a chat agent that lists claims as `- ` bullets.
pub struct AgentExtractor {
    agent: Arc<dyn ExpertAgent>,
}

impl AgentExtractor {
    pub fn new(agent: Arc<dyn ExpertAgent>) -> Self {
        Self { agent }
    }
}

#[async_trait]
impl ClaimExtractor for AgentExtractor {
    async fn extract(&self, response: &ExpertResponse) -> Result<Vec<Claim>, ConsensusError> {
        let params = GenerationParams { temperature: 0.0, top_p: 1.0, max_new_tokens: 2048, reasoning_level: ReasoningLevel::Minimal };
        let request = AgentRequest {
            messages: vec![ChatMessage::system(EXTRACTOR_INSTRUCTIONS), ChatMessage::user(response.text.clone())],
            params,
        };
        let reply = self.agent.generate(&request, None).await.map_err(|e| ConsensusError::Extraction {
            expert_id: response.expert_id.clone(),
            reason: e.to_string(),
        })?;
        Ok(reply
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- "))
            .map(|s| Claim::new("", s.trim(), &response.expert_id))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{ExpertSpec, ScriptEntry, ScriptedExpert};

    fn response(id: &str, text: &str) -> ExpertResponse {
        ExpertResponse { expert_id: id.into(), text: text.into() }
    }

    #[tokio::test]
    async fn two_declaratives() {
        let r = response("a", "Paris is in France. The Seine flows through it.");
        let claims = extract_claims(&r, &SentenceExtractor).await.unwrap();
        assert_eq!(claims.len(), 2);
        assert_eq!(claims[0].statement, "Paris is in France.");
        assert_eq!(claims[1].statement, "The Seine flows through it.");
        assert_eq!(claims[1].claim_id, "a#2");
        assert!(claims.iter().all(|c| c.source_expert == "a"));
        let span = claims[1].span.unwrap();
        assert_eq!(&r.text[span.start..span.end], "The Seine flows through it.");
    }

    #[tokio::test]
    async fn empty_text_has_no_claims() {
        assert!(extract_claims(&response("a", ""), &SentenceExtractor).await.unwrap().is_empty());
        assert!(extract_claims(&response("a", "  \n\n "), &SentenceExtractor).await.unwrap().is_empty());
    }

    #[test]
    fn segmentation_rules() {
        let text = "## Heading\n- Water boils at 100 C at sea level.\n2. Pi is about 3.14159!\nIs this a question? Yes it is";
        let got: Vec<String> = SentenceExtractor::segment(text).into_iter().map(|(s, _)| s).collect();
        assert_eq!(got, ["Water boils at 100 C at sea level.", "Pi is about 3.14159!", "Yes it is"]);
        for (s, span) in SentenceExtractor::segment(text) {
            assert_eq!(text[span.start..span.end].split_whitespace().collect::<Vec<_>>().join(" "), s);
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_statement("  The  Seine, flows!  "), "the seine flows");
        assert_eq!(normalize_statement("X is 5."), normalize_statement("x IS 5"));
    }

    #[tokio::test]
    async fn agent_backed_extraction_matches_annotations() {
        let source = "The Eiffel Tower is in Paris. It was completed in 1889. It is made of wrought iron.";
        let annotated = ["The Eiffel Tower is located in Paris", "The Eiffel Tower was completed in 1889", "The Eiffel Tower is made of wrought iron"];
        let script = annotated.iter().map(|c| format!("- {c}")).collect::<Vec<_>>().join("\n");
        let agent = ScriptedExpert::lenient(ExpertSpec::new("judge", "mock", "extractor"), ScriptEntry::ok("", 0.0))
            .with_entry(source, ScriptEntry::ok(format!("Claims:\n{script}\n"), 0.0));
        let extractor = AgentExtractor::new(Arc::new(agent));
        let claims = extract_claims(&response("gpt", source), &extractor).await.unwrap();
        let statements: Vec<&str> = claims.iter().map(|c| c.statement.as_str()).collect();
        assert_eq!(statements, annotated);
        assert_eq!(claims[2].claim_id, "gpt#3");
    }

    #[tokio::test]
    async fn extractor_failure_names_expert() {
        let agent = ScriptedExpert::new(
            ExpertSpec::new("judge", "mock", "extractor"),
            [("other".to_string(), ScriptEntry::ok("- x", 0.0))].into_iter().collect(),
            crate::dispatch::ScriptMode::Strict,
        )
        .unwrap();
        let err = extract_claims(&response("claude", "Something."), &AgentExtractor::new(Arc::new(agent))).await.unwrap_err();
        assert!(matches!(err, ConsensusError::Extraction { expert_id, .. } if expert_id == "claude"));
    }
}
