use serde::{Deserialize, Serialize};

use super::support::ClaimSupport;
use super::ConsensusError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    Consensus,
    Partial,
    Unique,
}

/// Bucket for a claim backed by `count` of `n_experts` experts, or `None`
/// when the count is out of range.
pub fn bucket_for(count: usize, n_experts: usize) -> Option<Bucket> {
    match count {
        0 => None,
        c if c > n_experts => None,
        c if c == n_experts => Some(Bucket::Consensus),
        1 => Some(Bucket::Unique),
        _ => Some(Bucket::Partial),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimPartition {
    pub consensus: Vec<ClaimSupport>,
    pub partial: Vec<ClaimSupport>,
    pub unique: Vec<ClaimSupport>,
    pub n_experts: usize,
}

impl ClaimPartition {
    pub fn empty(n_experts: usize) -> Self {
        Self { consensus: Vec::new(), partial: Vec::new(), unique: Vec::new(), n_experts }
    }

    pub fn len(&self) -> usize {
        self.consensus.len() + self.partial.len() + self.unique.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket(&self, bucket: Bucket) -> &[ClaimSupport] {
        match bucket {
            Bucket::Consensus => &self.consensus,
            Bucket::Partial => &self.partial,
            Bucket::Unique => &self.unique,
        }
    }
}

/// Splits supports into consensus (all experts), partial (more than one but
/// not all) and unique (exactly one). Input order is kept within buckets.
pub fn partition_claims(supports: &[ClaimSupport], n_experts: usize) -> Result<ClaimPartition, ConsensusError> {
    if n_experts < 2 {
        return Err(ConsensusError::InvalidInput(format!("partitioning needs at least 2 experts, got {n_experts}")));
    }
    let mut partition = ClaimPartition::empty(n_experts);
    for support in supports {
        let bucket = bucket_for(support.support_count, n_experts).ok_or_else(|| {
            ConsensusError::Integrity(format!(
                "claim {} has support {} with {} experts",
                support.canonical_claim.claim_id, support.support_count, n_experts
            ))
        })?;
        match bucket {
            Bucket::Consensus => partition.consensus.push(support.clone()),
            Bucket::Partial => partition.partial.push(support.clone()),
            Bucket::Unique => partition.unique.push(support.clone()),
        }
    }
    Ok(partition)
}
