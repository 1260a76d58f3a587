//! Durable run transcripts and replay verification.
//!
//! A transcript is one pretty-printed JSON document holding a
//! [`CouncilResult`] under a `schema_version`. Replay re-derives everything
//! that can be derived from the stored raw data (support counts, buckets,
//! prompt, parsed report, latency bounds) and lists every field whose stored
//! value disagrees.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SynthesisMode;
use crate::consensus::council::CouncilResult;
use crate::consensus::partition::partition_claims;
use crate::consensus::prompt::construct_synthesis_prompt;
use crate::consensus::synthesis::parse_synthesis;
use crate::consensus::ClaimSupport;
use crate::dispatch::OutcomeStatus;

pub const SCHEMA_VERSION: u32 = 1;

/// Slack allowed when comparing latencies measured by different clocks
/// reads within one run.
const LATENCY_SLACK: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TranscriptError {
    #[error("storage error at {path}: {source}")]
    Storage {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("transcript parse error at line {line}, column {column} (byte offset {offset}): {message}")]
    Parse { line: usize, column: usize, offset: usize, message: String },
    #[error("unsupported transcript schema_version {0}")]
    Version(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub result: CouncilResult,
}

impl Transcript {
    pub fn new(result: CouncilResult) -> Self {
        Self { schema_version: SCHEMA_VERSION, result }
    }

    pub fn to_text(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("transcripts serialize");
        text.push('\n');
        text
    }

    pub fn from_text(text: &str) -> Result<Self, TranscriptError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != u64::from(SCHEMA_VERSION) {
            return Err(TranscriptError::Version(version));
        }
        serde_json::from_str(text).map_err(|e| parse_error(text, &e))
    }
}

fn parse_error(text: &str, err: &serde_json::Error) -> TranscriptError {
    let (line, column) = (err.line(), err.column());
    let line_start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    TranscriptError::Parse { line, column, offset: (line_start + column.saturating_sub(1)).min(text.len()), message: err.to_string() }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredTranscript {
    pub path: PathBuf,
    pub bytes: usize,
}

fn storage(path: &Path) -> impl Fn(std::io::Error) -> TranscriptError + '_ {
    move |source| TranscriptError::Storage { path: path.display().to_string(), source }
}

/// Writes the transcript next to `path`, fsyncs it, then renames it into
/// place, so a reader never sees a half-written file.
pub fn persist_transcript(result: &CouncilResult, path: impl AsRef<Path>) -> Result<StoredTranscript, TranscriptError> {
    let path = path.as_ref();
    let text = Transcript::new(result.clone()).to_text();
    let file_name = path.file_name().ok_or_else(|| storage(path)(std::io::Error::other("path has no file name")))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let mut file = File::create(&tmp).map_err(storage(path))?;
    file.write_all(text.as_bytes()).map_err(storage(path))?;
    file.sync_all().map_err(storage(path))?;
    drop(file);
    fs::rename(&tmp, path).map_err(storage(path))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(StoredTranscript { path: path.to_path_buf(), bytes: text.len() })
}

pub fn load_transcript(path: impl AsRef<Path>) -> Result<Transcript, TranscriptError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(storage(path))?;
    Transcript::from_text(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub field: String,
    pub stored: String,
    pub recomputed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub result: CouncilResult,
    pub mismatches: Vec<Mismatch>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

pub fn replay_transcript(path: impl AsRef<Path>) -> Result<ReplayReport, TranscriptError> {
    let transcript = load_transcript(path)?;
    Ok(verify_result(transcript.result))
}

fn ids(supports: &[ClaimSupport]) -> Vec<String> {
    supports.iter().map(|s| s.canonical_claim.claim_id.clone()).collect()
}

/// Re-derives the checkable parts of a result and reports disagreements.
pub fn verify_result(result: CouncilResult) -> ReplayReport {
    let mut out = Vec::new();
    let mut check = |field: String, stored: String, recomputed: String| {
        if stored != recomputed {
            out.push(Mismatch { field, stored, recomputed });
        }
    };

    for (i, o) in result.outcomes.iter().enumerate() {
        let ok = o.status == OutcomeStatus::Success;
        check(format!("outcomes[{i}].response"), o.response.is_some().to_string(), ok.to_string());
        if let Some(r) = &o.response {
            check(format!("outcomes[{i}].response.expert_id"), r.expert_id.clone(), o.expert_id.clone());
        }
        let lat = result.latency.expert_latencies.get(&o.expert_id).map(|l| format!("{l:?}")).unwrap_or_default();
        check(format!("latency.expert_latencies.{}", o.expert_id), lat, format!("{:?}", o.latency));
    }
    check(
        "latency.expert_latencies.len".into(),
        result.latency.expert_latencies.len().to_string(),
        result.outcomes.len().to_string(),
    );

    let successful: BTreeSet<&str> = result.outcomes.iter().filter(|o| o.is_success()).map(|o| o.expert_id.as_str()).collect();
    let claims: BTreeMap<&str, &crate::consensus::Claim> = result.claims.iter().map(|c| (c.claim_id.as_str(), c)).collect();
    check("claims.ids_unique".into(), result.claims.len().to_string(), claims.len().to_string());
    for c in &result.claims {
        check(format!("claims.{}.source_expert", c.claim_id), successful.contains(c.source_expert.as_str()).to_string(), "true".into());
    }

    if let Some(p) = &result.partition {
        check("partition.n_experts".into(), p.n_experts.to_string(), successful.len().to_string());
        let all: Vec<ClaimSupport> = p.consensus.iter().chain(&p.partial).chain(&p.unique).cloned().collect();
        let mut members_seen = BTreeMap::new();
        for s in &all {
            let id = &s.canonical_claim.claim_id;
            check(format!("support.{id}.support_count"), s.support_count.to_string(), s.supporters.len().to_string());
            let outside: Vec<&String> = s.supporters.iter().filter(|e| !successful.contains(e.as_str())).collect();
            check(format!("support.{id}.supporters_dispatched"), format!("{outside:?}"), "[]".into());
            let member_experts: BTreeSet<String> =
                s.member_ids.iter().filter_map(|m| claims.get(m.as_str())).map(|c| c.source_expert.clone()).collect();
            check(format!("support.{id}.supporters"), format!("{:?}", s.supporters), format!("{member_experts:?}"));
            check(format!("support.{id}.canonical"), id.clone(), s.member_ids.first().cloned().unwrap_or_default());
            if let Some(stored) = claims.get(id.as_str()) {
                check(format!("support.{id}.canonical_statement"), s.canonical_claim.statement.clone(), stored.statement.clone());
            }
            for m in &s.member_ids {
                *members_seen.entry(m.clone()).or_insert(0usize) += 1;
            }
        }
        for c in &result.claims {
            check(format!("claims.{}.membership", c.claim_id), members_seen.get(&c.claim_id).copied().unwrap_or(0).to_string(), "1".into());
        }
        match partition_claims(&all, p.n_experts) {
            Ok(re) => {
                check("partition.consensus".into(), format!("{:?}", ids(&p.consensus)), format!("{:?}", ids(&re.consensus)));
                check("partition.partial".into(), format!("{:?}", ids(&p.partial)), format!("{:?}", ids(&re.partial)));
                check("partition.unique".into(), format!("{:?}", ids(&p.unique)), format!("{:?}", ids(&re.unique)));
            }
            Err(e) => check("partition".into(), "valid".into(), e.to_string()),
        }
    }

    for (i, pair) in result.contradictions.iter().enumerate() {
        check(format!("contradictions[{i}].cross_expert"), (pair.claim_a.source_expert != pair.claim_b.source_expert).to_string(), "true".into());
        for c in [&pair.claim_a, &pair.claim_b] {
            let stored = claims.get(c.claim_id.as_str()).map(|s| s.statement.clone()).unwrap_or_default();
            check(format!("contradictions[{i}].{}", c.claim_id), c.statement.clone(), stored);
        }
    }

    if let (Some(p), Some(prompt)) = (&result.partition, &result.synthesis_prompt) {
        match construct_synthesis_prompt(p, &result.contradictions, &result.config.template, &result.query) {
            Ok(re) => check("synthesis_prompt".into(), prompt.clone(), re),
            Err(e) => check("synthesis_prompt".into(), "valid".into(), e.to_string()),
        }
    }
    if let (Some(raw), Some(report)) = (&result.synthesis_raw, &result.report) {
        let re = parse_synthesis(raw, &result.config.template.section_headers);
        check("report".into(), format!("{report:?}"), format!("{re:?}"));
        if result.config.synthesis_mode == SynthesisMode::Structured {
            check("final_answer".into(), format!("{:?}", result.final_answer), format!("{:?}", Some(&report.analysis_section)));
        }
    }

    let l = &result.latency;
    let floor = l.slowest_expert() + l.synthesis_latency;
    check("latency.total>=slowest+synthesis".into(), (l.total + LATENCY_SLACK >= floor).to_string(), "true".into());
    let finite = l.expert_latencies.values().chain([&l.synthesis_latency, &l.total]).all(|v| v.is_finite() && *v >= 0.0);
    check("latency.finite_nonnegative".into(), finite.to_string(), "true".into());

    ReplayReport { result, mismatches: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Backend, CouncilConfig};
    use crate::dispatch::Session;

    async fn sample() -> CouncilResult {
        let council = CouncilConfig::default().build_council(Backend::Mock).unwrap();
        council.run("What are the main drivers of coastal erosion?", &Session::new()).await.unwrap()
    }

    #[tokio::test(start_paused = true)]
    async fn persist_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let result = sample().await;
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        let stored = persist_transcript(&result, &a).unwrap();
        persist_transcript(&result, &b).unwrap();
        let bytes = fs::read(&a).unwrap();
        assert_eq!(stored.bytes, bytes.len());
        assert_eq!(bytes, fs::read(&b).unwrap());
        let loaded = load_transcript(&a).unwrap();
        assert_eq!(loaded.result, result);
        assert_eq!(loaded.to_text().into_bytes(), bytes);
        assert!(replay_transcript(&a).unwrap().is_clean());
    }

    #[tokio::test(start_paused = true)]
    async fn tampered_support_count_detected() {
        let mut result = sample().await;
        let p = result.partition.as_mut().unwrap();
        assert!(!p.consensus.is_empty());
        p.consensus[0].support_count -= 1;
        let report = verify_result(result);
        let fields: Vec<_> = report.mismatches.iter().map(|m| m.field.as_str()).collect();
        assert!(fields.iter().any(|f| f.ends_with("support_count")), "{fields:?}");
        assert!(fields.contains(&"partition.consensus"), "{fields:?}");
    }

    #[tokio::test(start_paused = true)]
    async fn unknown_version_rejected() {
        let text = Transcript::new(sample().await).to_text().replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(Transcript::from_text(&text), Err(TranscriptError::Version(7))));
    }

    #[tokio::test(start_paused = true)]
    async fn corrupted_bytes_report_offset() {
        let text = Transcript::new(sample().await).to_text();
        let mut rng_state = 0x2545_f491_4f6c_dd1du64;
        let mut hits = 0;
        for _ in 0..200 {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            let pos = (rng_state % text.len() as u64) as usize;
            let mut bytes = text.clone().into_bytes();
            if !bytes[pos].is_ascii() {
                continue;
            }
            bytes[pos] = b'\x01';
            let corrupted = String::from_utf8(bytes).unwrap();
            if let Err(TranscriptError::Parse { offset, .. }) = Transcript::from_text(&corrupted) {
                hits += 1;
                assert!(offset >= pos, "offset {offset} before flipped byte {pos}");
            }
        }
        assert!(hits > 50);
    }

    #[test]
    fn unwritable_path_is_storage_error() {
        let err = persist_transcript(&CouncilResult::new("q", &CouncilConfig::default()), "/nonexistent-dir/x/t.json").unwrap_err();
        assert!(matches!(err, TranscriptError::Storage { .. }));
    }
}
