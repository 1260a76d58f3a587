//! Claim-level consensus: extraction, support mapping, partitioning,
//! contradiction detection, prompt construction and structured synthesis.

pub mod claims;
pub mod contradiction;
pub mod council;
pub mod partition;
pub mod prompt;
pub mod support;
pub mod synthesis;
pub mod vote;

use thiserror::Error;

use crate::dispatch::AgentError;

pub use claims::{extract_claims, normalize_statement, AgentExtractor, Claim, ClaimExtractor, SentenceExtractor};
pub use contradiction::{detect_contradictions, ContradictionDetector, ContradictionPair, SubjectValueDetector, TableDetector};
pub use partition::{bucket_for, partition_claims, Bucket, ClaimPartition};
pub use prompt::{construct_synthesis_prompt, SynthesisPromptTemplate};
pub use support::{build_support_map, ClaimMatcher, ClaimSupport, NormalizedMatcher};
pub use synthesis::{parse_synthesis, synthesize_structured, SynthesisReport};
pub use vote::{majority_vote_baseline, AnswerExtractor, FinalAnswerExtractor};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ConsensusError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("claim extraction failed for expert {expert_id}: {reason}")]
    Extraction { expert_id: String, reason: String },
    #[error("claim matching failed: {0}")]
    Matching(String),
    #[error("partition integrity violated: {0}")]
    Integrity(String),
    #[error("contradiction detection failed: {0}")]
    Detection(String),
    #[error("synthesis failed: {0}")]
    Synthesis(AgentError),
    #[error("majority vote failed: {0}")]
    Vote(String),
}
