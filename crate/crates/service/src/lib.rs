//! HTTP/JSON front end for the council engine.
//!
//! `POST /council` starts a run in the background and returns its session
//! id; `GET /council/{id}/events` streams the run as server-sent events,
//! replaying anything already emitted; `GET /council/{id}` returns the
//! outcome. The analysis toolkit is exposed as plain JSON endpoints.

mod error;
mod session;

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::net::TcpListener;

use council_core::api::*;
use council_core::config::{Backend, ConfigError, Preset};
use council_core::dispatch::Session;
use council_core::errorsim::{analytic_joint, calibrate_pairwise, calibrate_shared_factor, joint_bound, simulate, ErrorModelParams};
use council_core::events::{stream_council, HEARTBEAT_INTERVAL};
use council_core::stats::{self, GroupScores, IndicatorSeries, ScoreKind, ETA_SQUARED_LARGE, STUDY_PRICING};
use council_core::transcript::{persist_transcript, verify_result, Transcript};
use council_core::triage::{evaluate_triage, synthetic_labeled_set};
use council_core::{Council, CouncilConfig};

pub use error::ApiError;
pub use session::SessionState;

/// Largest simulation a single request may ask for.
pub const MAX_TRIALS: usize = 50_000_000;
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub council: CouncilConfig,
    pub backend: Backend,
    /// Directory for per-run transcripts; `None` keeps results in memory only.
    pub transcript_dir: Option<PathBuf>,
    pub heartbeat: Duration,
}

impl ServiceConfig {
    pub fn new(council: CouncilConfig, backend: Backend) -> Self {
        Self { council, backend, transcript_dir: None, heartbeat: HEARTBEAT_INTERVAL }
    }
}

#[derive(Clone)]
pub struct AppState {
    config: Arc<ServiceConfig>,
    sessions: Arc<Mutex<HashMap<String, Arc<SessionState>>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        Self { config: Arc::new(config), sessions: Arc::default() }
    }

    fn session(&self, id: &str) -> Result<Arc<SessionState>, ApiError> {
        self.sessions
            .lock()
            .expect("session table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(format!("no session {id}")))
    }

    fn council_for(&self, req: &StartCouncilRequest) -> Result<Council, ConfigError> {
        let mut config = self.config.council.clone();
        if let Some(seed) = req.seed {
            config.seed = seed;
        }
        if let Some(name) = &req.preset {
            config.apply_preset(name.parse::<Preset>()?)?;
        }
        if let Some(n) = req.expert_count {
            config.expert_count = n;
            config.quorum = config.quorum.min(n);
        }
        if let Some(mode) = req.synthesis_mode {
            config.synthesis_mode = mode;
        }
        config.build_council(self.config.backend)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/council", post(start_council))
        .route("/council/{id}", get(get_session))
        .route("/council/{id}/events", get(session_events))
        .route("/simulate", post(run_simulation))
        .route("/stats/rho", post(stats_rho))
        .route("/stats/ci", post(stats_ci))
        .route("/stats/levene", post(stats_levene))
        .route("/stats/kappa", post(stats_kappa))
        .route("/stats/paired-t", post(stats_paired_t))
        .route("/stats/cost", post(stats_cost))
        .route("/stats/query-cost", post(stats_query_cost))
        .route("/triage/evaluate", post(triage_evaluate))
        .route("/transcripts/replay", post(replay))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state)
}

pub async fn serve(listener: TcpListener, state: AppState, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "council service listening");
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn start_council(State(state): State<AppState>, Json(req): Json<StartCouncilRequest>) -> Result<Response, ApiError> {
    if req.query.trim().is_empty() {
        return Err(ApiError::BadRequest("query is empty".into()));
    }
    let council = state.council_for(&req).map_err(ApiError::bad_request)?;
    let id = uuid::Uuid::new_v4().to_string();
    let session = SessionState::new(id.clone());
    state.sessions.lock().expect("session table poisoned").insert(id.clone(), session.clone());
    let transcript_dir = state.config.transcript_dir.clone();
    let history = Session { turns: req.history };
    let query = req.query;

    tokio::spawn(async move {
        let outcome = stream_council(&query, &history, &council, session.id(), session.as_ref()).await;
        match outcome {
            Ok(result) => {
                let path = transcript_dir.map(|dir| dir.join(format!("{}.json", session.id())));
                let stored = path.and_then(|p| match persist_transcript(&result, &p) {
                    Ok(stored) => Some(stored.path.display().to_string()),
                    Err(err) => {
                        tracing::warn!(session = session.id(), error = %err, "transcript not persisted");
                        None
                    }
                });
                tracing::info!(session = session.id(), "council run completed");
                session.finish(Ok(result), stored);
            }
            Err(failure) => {
                tracing::warn!(session = session.id(), stage = %failure.stage, message = %failure.message, "council run failed");
                session.finish(Err(FailureView { stage: failure.stage, message: failure.message }), None);
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(StartCouncilResponse { session_id: id })).into_response())
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.session(&id)?.view()))
}

async fn session_events(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let body = Body::from_stream(session.event_stream(state.config.heartbeat));
    Response::builder()
        .header(header::CONTENT_TYPE, "text/event-stream")
        .header(header::CACHE_CONTROL, "no-cache")
        .body(body)
        .map_err(|e| ApiError::Internal(e.to_string()))
}

fn calibrated(req: &SimulateRequest) -> Result<ErrorModelParams, ApiError> {
    let n = req.marginals.len();
    let params = if !req.pair_targets.is_empty() {
        let targets: Vec<_> = req.pair_targets.iter().map(|t| ((t.i, t.j), t.rho)).collect();
        calibrate_pairwise(&req.marginals, &targets, req.seed)
    } else if let Some(rho) = req.target_rho {
        calibrate_shared_factor(n, &req.marginals, rho, req.seed)
    } else {
        let params = ErrorModelParams::independent(req.marginals.clone(), req.seed);
        params.validate().map(|_| params)
    };
    params.map_err(ApiError::unprocessable)
}

async fn run_simulation(Json(req): Json<SimulateRequest>) -> Result<Json<SimulateResponse>, ApiError> {
    if req.trials > MAX_TRIALS {
        return Err(ApiError::BadRequest(format!("at most {MAX_TRIALS} trials per request")));
    }
    let params = calibrated(&req)?;
    let trials = req.trials;
    let response = tokio::task::spawn_blocking(move || {
        let result = simulate(&params, trials).map_err(ApiError::unprocessable)?;
        let p_max = params.marginal_rates.iter().copied().fold(0.0, f64::max);
        let bound = result.max_rho().map(|rho| joint_bound(p_max, rho, params.n_experts));
        Ok::<_, ApiError>(SimulateResponse { analytic_joint: analytic_joint(&params), joint_bound: bound, params, result })
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))??;
    Ok(Json(response))
}

async fn stats_rho(Json(req): Json<RhoRequest>) -> Result<Json<RhoResponse>, ApiError> {
    let a = IndicatorSeries::new("a", req.a).map_err(ApiError::bad_request)?;
    let b = IndicatorSeries::new("b", req.b).map_err(ApiError::bad_request)?;
    let rho = stats::pearson_error_correlation(&a, &b).map_err(ApiError::unprocessable)?;
    Ok(Json(RhoResponse { rho, n: a.values.len() }))
}

async fn stats_ci(Json(req): Json<CiRequest>) -> Result<Json<CiResponse>, ApiError> {
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (lower, upper) = stats::bootstrap_ci(&req.samples, mean, req.resamples, req.level, req.seed).map_err(ApiError::unprocessable)?;
    Ok(Json(CiResponse { mean: mean(&req.samples), lower, upper, level: req.level, resamples: req.resamples }))
}

async fn stats_levene(Json(req): Json<LeveneRequest>) -> Result<Json<LeveneResponse>, ApiError> {
    let groups = GroupScores { groups: req.groups, score_kind: ScoreKind::Neutrality };
    let (statistic, p_value) = stats::levene_test_with(&groups, req.center).map_err(ApiError::unprocessable)?;
    let eta = stats::eta_squared(&groups).ok();
    let means = groups.groups.iter().map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64)).collect();
    let bias_variance = stats::bias_variance(&means).map_err(ApiError::unprocessable)?;
    Ok(Json(LeveneResponse { statistic, p_value, eta_squared: eta, large_effect: eta.map(|e| e >= ETA_SQUARED_LARGE), bias_variance }))
}

async fn stats_kappa(Json(req): Json<KappaRequest>) -> Result<Json<KappaResponse>, ApiError> {
    let kappa = stats::cohens_kappa(&req.a, &req.b).map_err(ApiError::unprocessable)?;
    Ok(Json(KappaResponse { kappa, n: req.a.len() }))
}

async fn stats_paired_t(Json(req): Json<PairedTRequest>) -> Result<Json<PairedTResponse>, ApiError> {
    let (t, p_value) = stats::paired_t_test(&req.a, &req.b).map_err(ApiError::unprocessable)?;
    Ok(Json(PairedTResponse { t, p_value, n: req.a.len() }))
}

async fn stats_cost(Json(req): Json<CostRequest>) -> Result<Json<stats::CostReport>, ApiError> {
    Ok(Json(stats::cost_report(&req.single, &req.council).map_err(ApiError::unprocessable)?))
}

async fn stats_query_cost(Json(req): Json<QueryCostRequest>) -> Result<Json<QueryCostResponse>, ApiError> {
    let calls = stats::council_calls(req.n_experts, req.tokens_in, req.tokens_out);
    let cost = stats::estimate_query_cost(&calls, req.pricing.unwrap_or(STUDY_PRICING)).map_err(ApiError::unprocessable)?;
    Ok(Json(QueryCostResponse { cost, calls: calls.len() }))
}

async fn triage_evaluate(State(state): State<AppState>, Json(req): Json<TriageEvalRequest>) -> Result<Json<council_core::triage::TriageMetrics>, ApiError> {
    let dataset = match req.dataset {
        Some(d) => d,
        None => synthetic_labeled_set(req.synthetic.unwrap_or(2000), req.seed),
    };
    let council = state.config.council.build_council(state.config.backend).map_err(ApiError::bad_request)?;
    let metrics = evaluate_triage(&dataset, &state.config.council.triage, council.classifier.as_ref())
        .await
        .map_err(ApiError::unprocessable)?;
    Ok(Json(metrics))
}

async fn replay(Json(req): Json<ReplayRequest>) -> Result<Json<ReplayResponse>, ApiError> {
    let transcript = Transcript::from_text(&req.transcript).map_err(ApiError::unprocessable)?;
    let report = verify_result(transcript.result);
    Ok(Json(ReplayResponse {
        clean: report.is_clean(),
        mismatches: report.mismatches,
        query: report.result.query,
        final_answer: report.result.final_answer,
    }))
}
