use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::claims::{normalize_statement, Claim};
use super::ConsensusError;

/// Decides whether two claims assert incompatible facts.
pub trait ContradictionDetector: Send + Sync {
    fn contradicts(&self, a: &Claim, b: &Claim) -> Result<bool, ConsensusError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Contradicts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContradictionPair {
    pub claim_a: Claim,
    pub claim_b: Claim,
    pub relation: Relation,
}

/// Scripted detector: a symmetric table of contradictory statement pairs,
/// compared after normalization.
#[derive(Debug, Clone, Default)]
pub struct TableDetector {
    pairs: BTreeSet<(String, String)>,
}

impl TableDetector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_pair(mut self, a: &str, b: &str) -> Self {
        let (a, b) = (normalize_statement(a), normalize_statement(b));
        self.pairs.insert((a.clone(), b.clone()));
        self.pairs.insert((b, a));
        self
    }
}

impl ContradictionDetector for TableDetector {
    fn contradicts(&self, a: &Claim, b: &Claim) -> Result<bool, ConsensusError> {
        Ok(self.pairs.contains(&(a.normalized(), b.normalized())))
    }
}

/// Heuristic detector for `<subject> is <value>` claims: two claims about the
/// same subject with different values conflict.
#[derive(Debug, Clone, Copy, Default)]
pub struct SubjectValueDetector;

const COPULAS: &[&str] = &[" is ", " are ", " was ", " were "];

fn subject_value(claim: &Claim) -> Option<(String, String)> {
    let text = format!(" {} ", claim.normalized());
    COPULAS.iter().find_map(|cop| {
        let (subject, value) = text.split_once(cop)?;
        let (subject, value) = (subject.trim(), value.trim());
        (!subject.is_empty() && !value.is_empty()).then(|| (format!("{subject}{cop}"), value.to_string()))
    })
}

impl ContradictionDetector for SubjectValueDetector {
    fn contradicts(&self, a: &Claim, b: &Claim) -> Result<bool, ConsensusError> {
        Ok(match (subject_value(a), subject_value(b)) {
            (Some((sa, va)), Some((sb, vb))) => sa == sb && va != vb,
            _ => false,
        })
    }
}

/// All cross-expert contradictory pairs among `all_claims`, each unordered
/// pair reported once in input order.
pub fn detect_contradictions(all_claims: &[Claim], detector: &dyn ContradictionDetector) -> Result<Vec<ContradictionPair>, ConsensusError> {
    let mut pairs = Vec::new();
    for (i, a) in all_claims.iter().enumerate() {
        for b in &all_claims[i + 1..] {
            if a.source_expert == b.source_expert {
                continue;
            }
            if detector.contradicts(a, b)? {
                pairs.push(ContradictionPair { claim_a: a.clone(), claim_b: b.clone(), relation: Relation::Contradicts });
            }
        }
    }
    Ok(pairs)
}
