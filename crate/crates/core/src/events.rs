//! Server-sent event vocabulary for streaming a council run.
//!
//! Frames use standard SSE: an `event:` line with the event type, a single
//! `data:` line holding the JSON-encoded event, and a blank line. Heartbeats
//! are comment lines starting with `:`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::consensus::council::{Council, CouncilFailure, CouncilObserver, CouncilResult};
use crate::dispatch::{DispatchObserver, ExpertOutcome, Session};
use crate::triage::TriageDecision;

pub const HEARTBEAT_INTERVAL: std::time::Duration = std::time::Duration::from_secs(15);
pub const HEARTBEAT_FRAME: &str = ": heartbeat\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    CouncilStarted,
    TriageDecided,
    ExpertStarted,
    ExpertDelta,
    ExpertCompleted,
    ExpertFailed,
    SynthesisStarted,
    SynthesisDelta,
    FinalReport,
    CouncilError,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::CouncilStarted => "council_started",
            EventKind::TriageDecided => "triage_decided",
            EventKind::ExpertStarted => "expert_started",
            EventKind::ExpertDelta => "expert_delta",
            EventKind::ExpertCompleted => "expert_completed",
            EventKind::ExpertFailed => "expert_failed",
            EventKind::SynthesisStarted => "synthesis_started",
            EventKind::SynthesisDelta => "synthesis_delta",
            EventKind::FinalReport => "final_report",
            EventKind::CouncilError => "council_error",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EventKind::FinalReport | EventKind::CouncilError)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SseEvent {
    pub event_type: EventKind,
    pub session_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_id: Option<String>,
    pub sequence: u64,
    pub payload: Value,
}

#[derive(Debug, Error, PartialEq)]
pub enum FrameError {
    #[error("frame has no data line")]
    MissingData,
    #[error("bad event payload: {0}")]
    Payload(String),
    #[error("event line {line:?} disagrees with payload type {payload:?}")]
    TypeMismatch { line: String, payload: String },
}

impl SseEvent {
    /// One complete SSE frame, including the terminating blank line.
    pub fn to_frame(&self) -> String {
        let data = serde_json::to_string(self).expect("events serialize");
        format!("event: {}\ndata: {}\n\n", self.event_type.as_str(), data)
    }
}

/// Parses one frame (without the trailing blank line). Returns `Ok(None)`
/// for comment-only frames such as heartbeats.
pub fn parse_frame(frame: &str) -> Result<Option<SseEvent>, FrameError> {
    let mut event_line = None;
    let mut data = Vec::new();
    for line in frame.lines() {
        if line.starts_with(':') || line.is_empty() {
            continue;
        }
        let (field, value) = line.split_once(':').unwrap_or((line, ""));
        let value = value.strip_prefix(' ').unwrap_or(value);
        match field {
            "event" => event_line = Some(value.to_string()),
            "data" => data.push(value),
            _ => {}
        }
    }
    if data.is_empty() {
        return if event_line.is_none() { Ok(None) } else { Err(FrameError::MissingData) };
    }
    let event: SseEvent = serde_json::from_str(&data.join("\n")).map_err(|e| FrameError::Payload(e.to_string()))?;
    if let Some(line) = event_line {
        if line != event.event_type.as_str() {
            return Err(FrameError::TypeMismatch { line, payload: event.event_type.as_str().into() });
        }
    }
    Ok(Some(event))
}

/// Incremental parser for a byte stream of SSE frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buffer: String,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `chunk` and returns every event completed by it.
    pub fn push(&mut self, chunk: &str) -> Result<Vec<SseEvent>, FrameError> {
        self.buffer.push_str(&chunk.replace("\r\n", "\n"));
        let mut events = Vec::new();
        while let Some(end) = self.buffer.find("\n\n") {
            let frame: String = self.buffer.drain(..end + 2).collect();
            if let Some(event) = parse_frame(&frame)? {
                events.push(event);
            }
        }
        Ok(events)
    }
}

pub fn parse_frames(text: &str) -> Result<Vec<SseEvent>, FrameError> {
    let mut decoder = FrameDecoder::new();
    let mut events = decoder.push(text)?;
    if !decoder.buffer.trim().is_empty() {
        events.extend(parse_frame(&decoder.buffer)?);
    }
    Ok(events)
}

/// Receives the events of one session, in emission order. Delivery failures
/// (a disconnected subscriber) must not affect the run.
pub trait EventSink: Send + Sync {
    fn send(&self, event: SseEvent);
}

impl EventSink for tokio::sync::mpsc::UnboundedSender<SseEvent> {
    fn send(&self, event: SseEvent) {
        let _ = tokio::sync::mpsc::UnboundedSender::send(self, event);
    }
}

impl EventSink for Mutex<Vec<SseEvent>> {
    fn send(&self, event: SseEvent) {
        self.lock().expect("event log poisoned").push(event);
    }
}

/// Numbers events and forwards them to the sink. Sequence allocation and
/// delivery happen under one lock so the sink sees strictly increasing
/// sequence numbers even when experts report concurrently.
struct Emitter<'a> {
    session_id: &'a str,
    next: AtomicU64,
    order: Mutex<()>,
    sink: &'a dyn EventSink,
}

impl Emitter<'_> {
    fn emit(&self, kind: EventKind, expert_id: Option<&str>, payload: Value) {
        let _guard = self.order.lock().expect("emitter poisoned");
        let sequence = self.next.fetch_add(1, Ordering::SeqCst);
        self.sink.send(SseEvent {
            event_type: kind,
            session_id: self.session_id.to_string(),
            expert_id: expert_id.map(str::to_string),
            sequence,
            payload,
        });
    }
}

impl DispatchObserver for Emitter<'_> {
    fn expert_started(&self, expert_id: &str) {
        self.emit(EventKind::ExpertStarted, Some(expert_id), json!({}));
    }

    fn expert_delta(&self, expert_id: &str, delta: &str) {
        self.emit(EventKind::ExpertDelta, Some(expert_id), json!({ "text": delta }));
    }

    fn expert_finished(&self, outcome: &ExpertOutcome) {
        let id = Some(outcome.expert_id.as_str());
        match &outcome.response {
            Some(r) => self.emit(EventKind::ExpertCompleted, id, json!({ "latency": outcome.latency, "text": r.text })),
            None => self.emit(
                EventKind::ExpertFailed,
                id,
                json!({ "latency": outcome.latency, "status": outcome.status, "error": outcome.error }),
            ),
        }
    }
}

impl CouncilObserver for Emitter<'_> {
    fn triage_decided(&self, decision: &TriageDecision) {
        self.emit(EventKind::TriageDecided, None, serde_json::to_value(decision).expect("decision serializes"));
    }

    fn synthesis_started(&self, synthesizer_id: &str) {
        self.emit(EventKind::SynthesisStarted, None, json!({ "synthesizer": synthesizer_id }));
    }

    fn synthesis_delta(&self, delta: &str) {
        self.emit(EventKind::SynthesisDelta, None, json!({ "text": delta }));
    }
}

/// Runs the council while streaming its progress to `sink`. The returned
/// result is the same one [`Council::run`] would produce.
pub async fn stream_council(
    query: &str,
    history: &Session,
    council: &Council,
    session_id: &str,
    sink: &dyn EventSink,
) -> Result<CouncilResult, CouncilFailure> {
    let emitter = Emitter { session_id, next: AtomicU64::new(0), order: Mutex::new(()), sink };
    let experts: Vec<&str> = council.experts.iter().map(|e| e.id()).collect();
    emitter.emit(
        EventKind::CouncilStarted,
        None,
        json!({ "query": query, "experts": experts, "mode": council.config.mode, "synthesis_mode": council.config.synthesis_mode }),
    );
    let outcome = council.run_observed(query, history, &emitter).await;
    match &outcome {
        Ok(result) => emitter.emit(EventKind::FinalReport, None, final_report_payload(result)),
        Err(failure) => emitter.emit(EventKind::CouncilError, None, json!({ "stage": failure.stage, "message": failure.message })),
    }
    outcome
}

pub fn final_report_payload(result: &CouncilResult) -> Value {
    json!({ "final_answer": result.final_answer, "report": result.report })
}

/// Checks one session's event list against the ordering contract: strictly
/// increasing sequence, a single session id, `expert_started` before any
/// other event for that expert, exactly one terminal event per started
/// expert, and exactly one run-terminal event, which comes last.
pub fn validate_event_order(events: &[SseEvent]) -> Result<(), String> {
    let first = events.first().ok_or("no events")?;
    if first.event_type != EventKind::CouncilStarted {
        return Err(format!("first event is {:?}", first.event_type));
    }
    let mut state: BTreeMap<&str, (bool, usize)> = BTreeMap::new();
    let mut terminals = 0;
    for (i, e) in events.iter().enumerate() {
        if e.session_id != first.session_id {
            return Err(format!("event {i} belongs to session {}", e.session_id));
        }
        if i > 0 && e.sequence <= events[i - 1].sequence {
            return Err(format!("sequence not increasing at event {i}"));
        }
        if terminals > 0 {
            return Err(format!("event {i} follows the terminal event"));
        }
        let expert_scoped = matches!(e.event_type, EventKind::ExpertStarted | EventKind::ExpertDelta | EventKind::ExpertCompleted | EventKind::ExpertFailed);
        if expert_scoped {
            let id = e.expert_id.as_deref().ok_or_else(|| format!("event {i} lacks expert_id"))?;
            let entry = state.entry(id).or_insert((false, 0));
            match e.event_type {
                EventKind::ExpertStarted if entry.0 => return Err(format!("{id} started twice")),
                EventKind::ExpertStarted => entry.0 = true,
                _ if !entry.0 => return Err(format!("{id} reported before expert_started")),
                _ if entry.1 > 0 => return Err(format!("{id} reported after its terminal event")),
                EventKind::ExpertCompleted | EventKind::ExpertFailed => entry.1 += 1,
                _ => {}
            }
        }
        if e.event_type.is_terminal() {
            terminals += 1;
        }
    }
    if terminals != 1 {
        return Err(format!("{terminals} run-terminal events"));
    }
    if let Some((id, _)) = state.iter().find(|(_, (_, t))| *t != 1) {
        return Err(format!("{id} has no terminal event"));
    }
    Ok(())
}
