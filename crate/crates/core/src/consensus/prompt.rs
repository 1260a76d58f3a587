use serde::{Deserialize, Serialize};

use super::contradiction::ContradictionPair;
use super::partition::ClaimPartition;
use super::support::ClaimSupport;
use super::ConsensusError;

pub const EMPTY_MARKER: &str = "(none)";

/// Group labels as they appear in the prompt. The echo synthesizer and the
/// golden fixtures depend on this exact text.
pub const CONSENSUS_LABEL: &str = "CONSENSUS CLAIMS (supported by every expert):";
pub const PARTIAL_LABEL: &str = "PARTIAL AGREEMENT CLAIMS (supported by more than one expert, but not all):";
pub const CONTRADICTION_LABEL: &str = "CONTRADICTIONS (claims from different experts that conflict):";
pub const UNIQUE_LABEL: &str = "UNIQUE FINDINGS (supported by a single expert):";

const DEFAULT_RULES: [&str; 16] = [
    "Write exactly five sections, using the five required headers verbatim and in the order given.",
    "Never omit a section; if it has no content, write \"(none)\" under its header.",
    "Do not introduce any fact that does not appear in at least one expert claim listed above.",
    "Under the consensus header, restate every consensus claim; these are the most reliable findings.",
    "Under the partial agreement header, restate each partial claim and name the experts supporting it.",
    "Under the disagreement header, list every contradiction, quoting both sides and naming their experts.",
    "Never silently drop one side of a contradiction; every conflict must be flagged explicitly.",
    "Under the unique findings header, restate each unique claim and attribute it to its single expert.",
    "Mark unique findings as uncorroborated; do not present them as established fact.",
    "In the comprehensive analysis, answer the user's query directly using the claims above.",
    "In the comprehensive analysis, weigh claims by their support: consensus over partial over unique.",
    "When resolving a contradiction, state which side you favour and why, based only on the claims given.",
    "If the claims are insufficient to answer the query, say so plainly instead of guessing.",
    "Preserve numbers, units, names and dates exactly as the experts stated them.",
    "Do not refer to yourself, to this prompt, or to these rules in the output.",
    "Keep the tone neutral and avoid loaded language when experts disagree on contested topics.",
];

const DEFAULT_HEADERS: [&str; 5] = ["Consensus", "Partial Agreement", "Disagreements", "Unique Findings", "Comprehensive Analysis"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisPromptTemplate {
    pub rules: Vec<String>,
    /// Section labels in output order: consensus, partial, disagreement,
    /// unique, analysis.
    pub section_headers: [String; 5],
}

impl Default for SynthesisPromptTemplate {
    fn default() -> Self {
        Self {
            rules: DEFAULT_RULES.iter().map(|r| r.to_string()).collect(),
            section_headers: DEFAULT_HEADERS.map(String::from),
        }
    }
}

impl SynthesisPromptTemplate {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        if self.rules.is_empty() {
            return Err(ConsensusError::InvalidInput("synthesis template has no rules".into()));
        }
        for (i, h) in self.section_headers.iter().enumerate() {
            if h.trim().is_empty() {
                return Err(ConsensusError::InvalidInput("empty section header".into()));
            }
            if self.section_headers[..i].iter().any(|o| o.eq_ignore_ascii_case(h)) {
                return Err(ConsensusError::InvalidInput(format!("duplicate section header {h:?}")));
            }
        }
        Ok(())
    }
}

fn supporters(s: &ClaimSupport) -> String {
    s.supporters.iter().cloned().collect::<Vec<_>>().join(", ")
}

fn push_group(out: &mut String, label: &str, items: &[ClaimSupport]) {
    out.push_str(label);
    out.push('\n');
    if items.is_empty() {
        out.push_str(&format!("- {EMPTY_MARKER}\n"));
    }
    for s in items {
        out.push_str(&format!("- [{}] {} (experts: {})\n", s.canonical_claim.claim_id, s.canonical_claim.statement, supporters(s)));
    }
    out.push('\n');
}

/// Renders the synthesis prompt: query, the four claim groups, numbered
/// rules and the five required headers. Deterministic for fixed inputs.
pub fn construct_synthesis_prompt(
    partition: &ClaimPartition,
    contradictions: &[ContradictionPair],
    template: &SynthesisPromptTemplate,
    query: &str,
) -> Result<String, ConsensusError> {
    template.validate()?;
    let mut out = String::new();
    out.push_str(&format!(
        "You are the synthesis model of a council of {} independent experts. \
Their responses have been decomposed into claims and grouped by agreement below.\n\n",
        partition.n_experts
    ));
    out.push_str("USER QUERY:\n");
    out.push_str(query.trim());
    out.push_str("\n\n");
    push_group(&mut out, CONSENSUS_LABEL, &partition.consensus);
    push_group(&mut out, PARTIAL_LABEL, &partition.partial);
    out.push_str(CONTRADICTION_LABEL);
    out.push('\n');
    if contradictions.is_empty() {
        out.push_str(&format!("- {EMPTY_MARKER}\n"));
    }
    for pair in contradictions {
        out.push_str(&format!(
            "- [{}] {} ({}) <> [{}] {} ({})\n",
            pair.claim_a.claim_id,
            pair.claim_a.statement,
            pair.claim_a.source_expert,
            pair.claim_b.claim_id,
            pair.claim_b.statement,
            pair.claim_b.source_expert
        ));
    }
    out.push('\n');
    push_group(&mut out, UNIQUE_LABEL, &partition.unique);
    out.push_str("RULES:\n");
    for (i, rule) in template.rules.iter().enumerate() {
        out.push_str(&format!("{}. {}\n", i + 1, rule));
    }
    out.push_str("\nREQUIRED SECTIONS (in this order):\n");
    for header in &template.section_headers {
        out.push_str(&format!("## {header}\n"));
    }
    Ok(out)
}

/// Recovers the bullet lines of each claim group from a rendered prompt, in
/// the order consensus, partial, contradictions, unique. Empty markers are
/// returned as-is.
pub fn prompt_groups(prompt: &str) -> [Vec<String>; 4] {
    let labels = [CONSENSUS_LABEL, PARTIAL_LABEL, CONTRADICTION_LABEL, UNIQUE_LABEL];
    let mut groups: [Vec<String>; 4] = Default::default();
    let mut current: Option<usize> = None;
    for line in prompt.lines() {
        if let Some(idx) = labels.iter().position(|l| *l == line) {
            current = Some(idx);
            continue;
        }
        match current {
            Some(idx) if line.starts_with("- ") => groups[idx].push(line[2..].to_string()),
            Some(_) => current = None,
            None => {}
        }
    }
    groups
}
