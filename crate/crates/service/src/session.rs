//! Per-run state: the event log subscribers replay from, and the outcome.

use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use axum::body::Bytes;
use futures::Stream;
use tokio::sync::watch;

use council_core::api::{FailureView, SessionStatus, SessionView};
use council_core::events::{EventSink, HEARTBEAT_FRAME};
use council_core::{CouncilResult, SseEvent};

struct Inner {
    events: Vec<SseEvent>,
    /// The run-terminal event, held back until the outcome is recorded so
    /// that a subscriber seeing it can immediately fetch the result.
    held: Option<SseEvent>,
    status: SessionStatus,
    result: Option<CouncilResult>,
    failure: Option<FailureView>,
    transcript_path: Option<String>,
}

pub struct SessionState {
    id: String,
    inner: Mutex<Inner>,
    published: watch::Sender<usize>,
}

impl SessionState {
    pub fn new(id: String) -> Arc<Self> {
        Arc::new(Self {
            id,
            inner: Mutex::new(Inner {
                events: Vec::new(),
                held: None,
                status: SessionStatus::Running,
                result: None,
                failure: None,
                transcript_path: None,
            }),
            published: watch::channel(0).0,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("session state poisoned")
    }

    fn publish(&self, inner: &Inner) {
        self.published.send_replace(inner.events.len());
    }

    /// Records the outcome, then releases the held terminal event.
    pub fn finish(&self, outcome: Result<CouncilResult, FailureView>, transcript_path: Option<String>) {
        let mut inner = self.lock();
        match outcome {
            Ok(result) => {
                inner.status = SessionStatus::Completed;
                inner.result = Some(result);
            }
            Err(failure) => {
                inner.status = SessionStatus::Failed;
                inner.failure = Some(failure);
            }
        }
        inner.transcript_path = transcript_path;
        if let Some(event) = inner.held.take() {
            inner.events.push(event);
        }
        self.publish(&inner);
    }

    pub fn view(&self) -> SessionView {
        let inner = self.lock();
        SessionView {
            session_id: self.id.clone(),
            status: inner.status,
            result: inner.result.clone(),
            failure: inner.failure.clone(),
            transcript_path: inner.transcript_path.clone(),
        }
    }

    /// Published events from `from` on, and whether the log is complete.
    fn events_since(&self, from: usize) -> (Vec<SseEvent>, bool) {
        let inner = self.lock();
        let fresh = inner.events.get(from..).unwrap_or_default().to_vec();
        let complete = inner.status != SessionStatus::Running && inner.held.is_none();
        (fresh, complete)
    }

    /// SSE body: every event so far, then live events, with a heartbeat
    /// comment every `heartbeat`. Ends after the run-terminal event.
    pub fn event_stream(self: Arc<Self>, heartbeat: Duration) -> impl Stream<Item = Result<Bytes, Infallible>> + Send {
        struct Cursor {
            session: Arc<SessionState>,
            rx: watch::Receiver<usize>,
            beat: tokio::time::Interval,
            next: usize,
            done: bool,
        }
        let rx = self.published.subscribe();
        let mut beat = tokio::time::interval_at(tokio::time::Instant::now() + heartbeat, heartbeat);
        beat.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        let cursor = Cursor { session: self, rx, beat, next: 0, done: false };
        futures::stream::unfold(cursor, move |mut c| async move {
            loop {
                if c.done {
                    return None;
                }
                c.rx.mark_unchanged();
                let (fresh, complete) = c.session.events_since(c.next);
                if !fresh.is_empty() {
                    c.next += fresh.len();
                    c.done = fresh.iter().any(|e| e.event_type.is_terminal()) || complete;
                    let body: String = fresh.iter().map(SseEvent::to_frame).collect();
                    return Some((Ok(Bytes::from(body)), c));
                }
                if complete {
                    return None;
                }
                tokio::select! {
                    changed = c.rx.changed() => {
                        if changed.is_err() {
                            c.done = true;
                        }
                    }
                    _ = c.beat.tick() => {
                        return Some((Ok(Bytes::from_static(HEARTBEAT_FRAME.as_bytes())), c));
                    }
                }
            }
        })
    }
}

impl EventSink for SessionState {
    fn send(&self, event: SseEvent) {
        let mut inner = self.lock();
        if event.event_type.is_terminal() {
            inner.held = Some(event);
            return;
        }
        inner.events.push(event);
        self.publish(&inner);
    }
}
