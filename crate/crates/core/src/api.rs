//! Request and response bodies of the HTTP interface, shared by the service
//! and its client.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::SynthesisMode;
use crate::consensus::council::FailureStage;
use crate::dispatch::ChatMessage;
use crate::errorsim::{ErrorModelParams, SimulationResult};
use crate::stats::{CostParams, LeveneCenter, Pricing, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::transcript::Mismatch;
use crate::triage::LabeledQuery;
use crate::CouncilResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StartCouncilRequest {
    pub query: String,
    #[serde(default)]
    pub history: Vec<ChatMessage>,
    /// Per-run overrides of the service configuration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Preset name such as `council-noweb`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthesis_mode: Option<SynthesisMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartCouncilResponse {
    pub session_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureView {
    pub stage: FailureStage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub status: SessionStatus,
    #[serde(default)]
    pub result: Option<CouncilResult>,
    #[serde(default)]
    pub failure: Option<FailureView>,
    /// Where the service stored the transcript, if it keeps them.
    #[serde(default)]
    pub transcript_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairTarget {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

/// Either a single shared target correlation or one target per pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateRequest {
    pub marginals: Vec<f64>,
    #[serde(default)]
    pub target_rho: Option<f64>,
    #[serde(default)]
    pub pair_targets: Vec<PairTarget>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub params: ErrorModelParams,
    pub result: SimulationResult,
    pub analytic_joint: f64,
    /// Bound at the largest marginal and largest empirical correlation.
    pub joint_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRequest {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoResponse {
    pub rho: f64,
    pub n: usize,
}

fn default_resamples() -> usize {
    DEFAULT_RESAMPLES
}

fn default_level() -> f64 {
    DEFAULT_LEVEL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRequest {
    pub samples: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResponse {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveneRequest {
    pub groups: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub center: LeveneCenter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeveneResponse {
    pub statistic: f64,
    pub p_value: f64,
    pub eta_squared: Option<f64>,
    pub large_effect: Option<bool>,
    /// Population variance of the group means.
    pub bias_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaRequest {
    pub a: Vec<String>,
    pub b: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResponse {
    pub kappa: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTRequest {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTResponse {
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRequest {
    pub single: CostParams,
    pub council: CostParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCostRequest {
    pub n_experts: usize,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Defaults to the study price schedule.
    #[serde(default)]
    pub pricing: Option<Pricing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryCostResponse {
    pub cost: f64,
    pub calls: usize,
}

/// Labeled queries to score; when `dataset` is absent a synthetic set of
/// `synthetic` items is generated from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageEvalRequest {
    #[serde(default)]
    pub dataset: Option<Vec<LabeledQuery>>,
    #[serde(default)]
    pub synthetic: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    /// Full transcript document.
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub clean: bool,
    pub mismatches: Vec<Mismatch>,
    pub query: String,
    pub final_answer: Option<String>,
}
