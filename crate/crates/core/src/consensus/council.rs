//! End-to-end composition: triage, parallel dispatch, claim consensus and
//! synthesis.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use futures::future::join_all;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use super::claims::{extract_claims, Claim, ClaimExtractor, SentenceExtractor};
use super::contradiction::{detect_contradictions, ContradictionDetector, ContradictionPair, SubjectValueDetector};
use super::partition::{partition_claims, ClaimPartition};
use super::prompt::construct_synthesis_prompt;
use super::support::{build_support_map, ClaimMatcher, NormalizedMatcher};
use super::synthesis::{synthesize_structured, SynthesisReport};
use super::vote::{majority_vote_baseline, AnswerExtractor, FinalAnswerExtractor};
use crate::config::{CouncilConfig, CouncilMode, SynthesisMode};
use crate::dispatch::{
    collect_quorum, dispatch_parallel, AgentRequest, DispatchObserver, ExpertAgent, ExpertOutcome, LatencyBreakdown, Session,
};
use crate::triage::{triage_query, ServerClassifier, TriageDecision, TriageOutcome};

/// Everything a council run produced. Fields after `triage` are left empty
/// when the run stopped before reaching them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouncilResult {
    pub query: String,
    pub seed: u64,
    pub config: CouncilConfig,
    pub triage: TriageDecision,
    pub outcomes: Vec<ExpertOutcome>,
    pub claims: Vec<Claim>,
    pub partition: Option<ClaimPartition>,
    pub contradictions: Vec<ContradictionPair>,
    pub synthesis_prompt: Option<String>,
    pub synthesis_raw: Option<String>,
    pub report: Option<SynthesisReport>,
    pub final_answer: Option<String>,
    pub latency: LatencyBreakdown,
}

impl CouncilResult {
    /// Empty result for `query`, as it stands before triage.
    pub fn new(query: &str, config: &CouncilConfig) -> Self {
        Self {
            query: query.to_string(),
            seed: config.seed,
            config: config.clone(),
            triage: TriageDecision::forced_council(),
            outcomes: Vec::new(),
            claims: Vec::new(),
            partition: None,
            contradictions: Vec::new(),
            synthesis_prompt: None,
            synthesis_raw: None,
            report: None,
            final_answer: None,
            latency: LatencyBreakdown { expert_latencies: BTreeMap::new(), synthesis_latency: 0.0, total: 0.0 },
        }
    }

    pub fn bypassed(&self) -> bool {
        self.triage.outcome == TriageOutcome::Bypass
    }

    /// Copy with every wall-clock measurement zeroed, for comparing runs.
    pub fn without_timings(&self) -> Self {
        let mut copy = self.clone();
        for o in &mut copy.outcomes {
            o.latency = 0.0;
        }
        copy.latency.expert_latencies.values_mut().for_each(|l| *l = 0.0);
        copy.latency.synthesis_latency = 0.0;
        copy.latency.total = 0.0;
        copy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Triage,
    Dispatch,
    Quorum,
    Extraction,
    Matching,
    Partition,
    Detection,
    Prompt,
    Synthesis,
    Vote,
}

impl fmt::Display for FailureStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// A failed run, with everything computed up to the failing stage.
#[derive(Debug, Clone)]
pub struct CouncilFailure {
    pub stage: FailureStage,
    pub message: String,
    pub partial: Box<CouncilResult>,
}

impl fmt::Display for CouncilFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "council failed at {}: {}", self.stage, self.message)
    }
}

impl std::error::Error for CouncilFailure {}

/// Progress hooks for a whole run; dispatch hooks are inherited.
pub trait CouncilObserver: DispatchObserver {
    fn triage_decided(&self, _decision: &TriageDecision) {}
    fn synthesis_started(&self, _synthesizer_id: &str) {}
    fn synthesis_delta(&self, _delta: &str) {}
}

impl CouncilObserver for () {}

pub struct Council {
    pub config: CouncilConfig,
    pub experts: Vec<Arc<dyn ExpertAgent>>,
    pub synthesizer: Arc<dyn ExpertAgent>,
    pub classifier: Arc<dyn ServerClassifier>,
    pub extractor: Arc<dyn ClaimExtractor>,
    pub matcher: Arc<dyn ClaimMatcher>,
    pub detector: Arc<dyn ContradictionDetector>,
    pub answer_extractor: Arc<dyn AnswerExtractor>,
}

impl Council {
    /// Council with the reference extractor, matcher, detector and answer
    /// extractor. `experts` is the full roster; the config decides how many
    /// of them take part.
    pub fn new(
        config: CouncilConfig,
        experts: Vec<Arc<dyn ExpertAgent>>,
        synthesizer: Arc<dyn ExpertAgent>,
        classifier: Arc<dyn ServerClassifier>,
    ) -> Self {
        Self {
            config,
            experts,
            synthesizer,
            classifier,
            extractor: Arc::new(SentenceExtractor),
            matcher: Arc::new(NormalizedMatcher::new()),
            detector: Arc::new(SubjectValueDetector),
            answer_extractor: Arc::new(FinalAnswerExtractor),
        }
    }

    pub fn with_matcher(mut self, matcher: Arc<dyn ClaimMatcher>) -> Self {
        self.matcher = matcher;
        self
    }

    pub fn with_detector(mut self, detector: Arc<dyn ContradictionDetector>) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_extractor(mut self, extractor: Arc<dyn ClaimExtractor>) -> Self {
        self.extractor = extractor;
        self
    }

    fn active_experts(&self) -> &[Arc<dyn ExpertAgent>] {
        let n = match self.config.mode {
            CouncilMode::Council => self.config.expert_count,
            CouncilMode::Single => 1,
        };
        &self.experts[..n.min(self.experts.len())]
    }

    pub async fn run(&self, query: &str, history: &Session) -> Result<CouncilResult, CouncilFailure> {
        self.run_observed(query, history, &()).await
    }

    pub async fn run_observed(&self, query: &str, history: &Session, observer: &dyn CouncilObserver) -> Result<CouncilResult, CouncilFailure> {
        let start = Instant::now();
        let mut result = CouncilResult::new(query, &self.config);
        let fail = |stage: FailureStage, message: String, mut partial: CouncilResult| {
            partial.latency.total = start.elapsed().as_secs_f64();
            tracing::warn!(%stage, %message, "council run failed");
            Err(CouncilFailure { stage, message, partial: Box::new(partial) })
        };

        if self.config.triage_enabled {
            match triage_query(query, history, &self.config.triage, self.classifier.as_ref()).await {
                Ok(decision) => result.triage = decision,
                Err(e) => return fail(FailureStage::Triage, e.to_string(), result),
            }
        } else if query.trim().is_empty() {
            return fail(FailureStage::Triage, "query is empty".into(), result);
        }
        observer.triage_decided(&result.triage);

        if result.bypassed() {
            let answer = match result.triage.direct_answer.clone() {
                Some(answer) => answer,
                None => {
                    let request = AgentRequest::single(query.trim(), self.synthesizer.spec().generation.clone());
                    match self.synthesizer.generate(&request, None).await {
                        Ok(text) => text,
                        Err(e) => return fail(FailureStage::Synthesis, e.to_string(), result),
                    }
                }
            };
            result.final_answer = Some(answer);
            result.latency.total = start.elapsed().as_secs_f64();
            return Ok(result);
        }

        let experts = self.active_experts();
        let outcomes = match dispatch_parallel(query, history, experts, self.config.expert_timeout(), observer).await {
            Ok(o) => o,
            Err(e) => return fail(FailureStage::Dispatch, e.to_string(), result),
        };
        result.latency.expert_latencies = outcomes.iter().map(|o| (o.expert_id.clone(), o.latency)).collect();
        result.outcomes = outcomes;

        if self.config.mode == CouncilMode::Single {
            match collect_quorum(&result.outcomes, 1) {
                Ok(mut responses) => result.final_answer = Some(responses.remove(0).text),
                Err(e) => return fail(FailureStage::Quorum, e.to_string(), result),
            }
            result.latency.total = start.elapsed().as_secs_f64();
            return Ok(result);
        }

        let responses = match collect_quorum(&result.outcomes, self.config.quorum) {
            Ok(r) => r,
            Err(e) => return fail(FailureStage::Quorum, e.to_string(), result),
        };

        let extracted = join_all(responses.iter().map(|r| extract_claims(r, self.extractor.as_ref()))).await;
        let mut claim_sets = Vec::with_capacity(responses.len());
        for (response, claims) in responses.iter().zip(extracted) {
            match claims {
                Ok(claims) => claim_sets.push((response.expert_id.clone(), claims)),
                Err(e) => return fail(FailureStage::Extraction, e.to_string(), result),
            }
        }
        result.claims = claim_sets.iter().flat_map(|(_, c)| c.iter().cloned()).collect();

        let supports = match build_support_map(&claim_sets, self.matcher.as_ref()) {
            Ok(s) => s,
            Err(e) => return fail(FailureStage::Matching, e.to_string(), result),
        };
        match partition_claims(&supports, responses.len()) {
            Ok(p) => result.partition = Some(p),
            Err(e) => return fail(FailureStage::Partition, e.to_string(), result),
        }
        match detect_contradictions(&result.claims, self.detector.as_ref()) {
            Ok(c) => result.contradictions = c,
            Err(e) => return fail(FailureStage::Detection, e.to_string(), result),
        }

        match self.config.synthesis_mode {
            SynthesisMode::MajorityVote => match majority_vote_baseline(&responses, self.answer_extractor.as_ref()) {
                Ok(answer) => result.final_answer = Some(answer),
                Err(e) => return fail(FailureStage::Vote, e.to_string(), result),
            },
            SynthesisMode::Structured => {
                let partition = result.partition.as_ref().expect("partition computed above");
                let prompt = match construct_synthesis_prompt(partition, &result.contradictions, &self.config.template, query) {
                    Ok(p) => p,
                    Err(e) => return fail(FailureStage::Prompt, e.to_string(), result),
                };
                result.synthesis_prompt = Some(prompt.clone());
                observer.synthesis_started(self.synthesizer.id());
                let synth_start = Instant::now();
                let on_delta = |d: &str| observer.synthesis_delta(d);
                let synthesized = synthesize_structured(&prompt, self.synthesizer.as_ref(), &self.config.template, Some(&on_delta)).await;
                result.latency.synthesis_latency = synth_start.elapsed().as_secs_f64();
                match synthesized {
                    Ok((report, raw)) => {
                        result.final_answer = Some(report.analysis_section.clone());
                        result.report = Some(report);
                        result.synthesis_raw = Some(raw);
                    }
                    Err(e) => return fail(FailureStage::Synthesis, e.to_string(), result),
                }
            }
        }
        result.latency.total = start.elapsed().as_secs_f64();
        Ok(result)
    }
}

/// Runs the full protocol for `query` with the given council.
pub async fn run_council(query: &str, history: &Session, council: &Council) -> Result<CouncilResult, CouncilFailure> {
    council.run(query, history).await
}
