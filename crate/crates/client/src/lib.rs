//! Typed client for the council service.

use futures::{Stream, StreamExt};
use reqwest::{Response, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use council_core::api::*;
use council_core::events::{FrameDecoder, FrameError};
use council_core::stats::CostReport;
use council_core::triage::TriageMetrics;
use council_core::SseEvent;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("service returned {status}: {message}")]
    Api { status: StatusCode, message: String },
    #[error("malformed event stream: {0}")]
    Frame(#[from] FrameError),
    #[error("event stream is not valid UTF-8")]
    Encoding,
}

#[derive(Debug, Clone)]
pub struct CouncilClient {
    base: String,
    http: reqwest::Client,
}

impl CouncilClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self { base: base.into().trim_end_matches('/').to_string(), http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    async fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, ClientError> {
        let resp = Self::check(resp).await?;
        Ok(resp.json().await?)
    }

    async fn check(resp: Response) -> Result<Response, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp);
        }
        let text = resp.text().await.unwrap_or_default();
        let message = serde_json::from_str::<ErrorBody>(&text).map(|b| b.error).unwrap_or(text);
        Err(ClientError::Api { status, message })
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path)).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        Self::check(self.http.get(self.url("/health")).send().await?).await?;
        Ok(())
    }

    pub async fn start_council(&self, req: &StartCouncilRequest) -> Result<String, ClientError> {
        let resp: StartCouncilResponse = self.post("/council", req).await?;
        Ok(resp.session_id)
    }

    pub async fn session(&self, id: &str) -> Result<SessionView, ClientError> {
        Self::decode(self.http.get(self.url(&format!("/council/{id}"))).send().await?).await
    }

    /// Events of session `id`, from the first one on. Heartbeats are
    /// dropped; the stream ends after the run-terminal event.
    pub async fn events(&self, id: &str) -> Result<impl Stream<Item = Result<SseEvent, ClientError>>, ClientError> {
        let resp = Self::check(self.http.get(self.url(&format!("/council/{id}/events"))).send().await?).await?;
        let mut decoder = FrameDecoder::new();
        let mut pending = Vec::new();
        let stream = resp.bytes_stream().flat_map(move |chunk| {
            let batch: Vec<Result<SseEvent, ClientError>> = match chunk {
                Err(e) => vec![Err(e.into())],
                Ok(bytes) => {
                    pending.extend_from_slice(&bytes);
                    // Keep any trailing partial UTF-8 sequence for the next chunk.
                    let valid = match std::str::from_utf8(&pending) {
                        Ok(_) => pending.len(),
                        Err(e) if e.error_len().is_none() => e.valid_up_to(),
                        Err(_) => return futures::stream::iter(vec![Err(ClientError::Encoding)]),
                    };
                    let text = String::from_utf8(pending.drain(..valid).collect()).expect("validated above");
                    match decoder.push(&text) {
                        Ok(events) => events.into_iter().map(Ok).collect(),
                        Err(e) => vec![Err(e.into())],
                    }
                }
            };
            futures::stream::iter(batch)
        });
        Ok(stream)
    }

    /// Starts a run and collects its full event log.
    pub async fn run_and_collect(&self, req: &StartCouncilRequest) -> Result<(String, Vec<SseEvent>, SessionView), ClientError> {
        let id = self.start_council(req).await?;
        let mut stream = Box::pin(self.events(&id).await?);
        let mut events = Vec::new();
        while let Some(event) = stream.next().await {
            events.push(event?);
        }
        let view = self.session(&id).await?;
        Ok((id, events, view))
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<SimulateResponse, ClientError> {
        self.post("/simulate", req).await
    }

    pub async fn rho(&self, req: &RhoRequest) -> Result<RhoResponse, ClientError> {
        self.post("/stats/rho", req).await
    }

    pub async fn ci(&self, req: &CiRequest) -> Result<CiResponse, ClientError> {
        self.post("/stats/ci", req).await
    }

    pub async fn levene(&self, req: &LeveneRequest) -> Result<LeveneResponse, ClientError> {
        self.post("/stats/levene", req).await
    }

    pub async fn kappa(&self, req: &KappaRequest) -> Result<KappaResponse, ClientError> {
        self.post("/stats/kappa", req).await
    }

    pub async fn paired_t(&self, req: &PairedTRequest) -> Result<PairedTResponse, ClientError> {
        self.post("/stats/paired-t", req).await
    }

    pub async fn cost(&self, req: &CostRequest) -> Result<CostReport, ClientError> {
        self.post("/stats/cost", req).await
    }

    pub async fn query_cost(&self, req: &QueryCostRequest) -> Result<QueryCostResponse, ClientError> {
        self.post("/stats/query-cost", req).await
    }

    pub async fn triage_evaluate(&self, req: &TriageEvalRequest) -> Result<TriageMetrics, ClientError> {
        self.post("/triage/evaluate", req).await
    }

    pub async fn replay(&self, transcript: impl Into<String>) -> Result<ReplayResponse, ClientError> {
        self.post("/transcripts/replay", &ReplayRequest { transcript: transcript.into() }).await
    }
}
