//! Session registry, per-session tick drivers and the axum router.

use std::collections::HashMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use duplex_core::backends::GeneratorBackend;
use duplex_core::session::{GenConfig, Session, SessionError, SessionId, SessionState, SlicePair};
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tracing::{debug, info, warn};

use crate::clock::{TickSource, Ticker};
use crate::config::{ConfigError, ServiceConfig, SessionOverrides};
use crate::transcript::{Outcome, TranscriptError, TranscriptStore, TranscriptWriter};
use crate::wire::{Direction, MessageType, WireMessage};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("server is shutting down")]
    ShuttingDown,
}

struct Live {
    session: Arc<Session>,
    stop: watch::Sender<bool>,
    driver: JoinHandle<Outcome>,
}

struct Inner {
    defaults: GenConfig,
    auth_token: Option<String>,
    backend: Arc<dyn GeneratorBackend>,
    clock: TickSource,
    store: TranscriptStore,
    sessions: Mutex<HashMap<SessionId, Live>>,
    shutdown: watch::Sender<bool>,
}

/// Handle to an open session returned by [`Service::open_session`].
#[derive(Clone)]
pub struct SessionHandle {
    pub id: SessionId,
    pub session: Arc<Session>,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

impl Service {
    pub fn new(
        cfg: &ServiceConfig,
        backend: Arc<dyn GeneratorBackend>,
        clock: TickSource,
    ) -> Result<Self, ServiceError> {
        cfg.validate()?;
        Ok(Self {
            inner: Arc::new(Inner {
                defaults: cfg.session.clone(),
                auth_token: cfg.auth_token.clone(),
                backend,
                clock,
                store: TranscriptStore::open(&cfg.transcript_dir)?,
                sessions: Mutex::new(HashMap::new()),
                shutdown: watch::channel(false).0,
            }),
        })
    }

    pub fn store(&self) -> &TranscriptStore {
        &self.inner.store
    }

    fn sessions(&self) -> std::sync::MutexGuard<'_, HashMap<SessionId, Live>> {
        self.inner
            .sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
    }

    pub fn session_ids(&self) -> Vec<SessionId> {
        let mut ids: Vec<SessionId> = self.sessions().keys().cloned().collect();
        ids.sort();
        ids
    }

    pub fn snapshot(&self, id: &SessionId) -> Option<SessionState> {
        self.sessions().get(id).map(|l| l.session.snapshot())
    }

    /// Creates a session and starts its tick driver. Tick frames go to `out`,
    /// preceded by the `open` acknowledgement.
    pub fn open_session(
        &self,
        overrides: &SessionOverrides,
        out: mpsc::UnboundedSender<WireMessage>,
    ) -> Result<SessionHandle, ServiceError> {
        if *self.inner.shutdown.borrow() {
            return Err(ServiceError::ShuttingDown);
        }
        let config = overrides.apply(&self.inner.defaults)?;
        let id = SessionId::new(uuid::Uuid::new_v4().to_string());
        let session = Arc::new(Session::new(SessionState::new(id.clone(), config.clone())?));
        let writer = self.inner.store.create(&id, &config)?;
        let ticker = Ticker::new(&self.inner.clock, config.tick_seconds);
        let config_json = serde_json::to_string(&config).expect("config serializes");
        let (stop, stop_rx) = watch::channel(false);
        let (ready, ready_rx) = oneshot::channel();
        let driver = tokio::spawn(drive(
            session.clone(),
            self.inner.backend.clone(),
            writer,
            ticker,
            out,
            Signals {
                ready: ready_rx,
                stop: stop_rx,
                shutdown: self.inner.shutdown.subscribe(),
            },
        ));
        info!(session = %id, tick_seconds = config.tick_seconds, "session opened");
        self.sessions().insert(
            id.clone(),
            Live {
                session: session.clone(),
                stop,
                driver,
            },
        );
        // Registered before the ack so a client reacting to it finds the session.
        let _ = ready.send(WireMessage::opened(id.as_str(), config_json));
        Ok(SessionHandle { id, session })
    }

    /// Stops the session's driver and waits for its transcript to be
    /// flushed. `None` if the session is not open.
    pub async fn close_session(&self, id: &SessionId) -> Option<Outcome> {
        let live = self.sessions().remove(id)?;
        let _ = live.stop.send(true);
        let outcome = live.driver.await.unwrap_or(Outcome::Errored);
        info!(session = %id, ?outcome, "session closed");
        Some(outcome)
    }

    /// Stops every session and flushes all transcripts.
    pub async fn shutdown(&self) {
        self.inner.shutdown.send_replace(true);
        let live: Vec<(SessionId, Live)> = self.sessions().drain().collect();
        for (id, l) in live {
            let outcome = l.driver.await.unwrap_or(Outcome::Errored);
            info!(session = %id, ?outcome, "session stopped by shutdown");
        }
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/duplex", get(duplex_ws))
            .route("/health", get(health))
            .with_state(self.clone())
    }

    /// Serves until `signal` resolves, then shuts every session down.
    pub async fn serve(
        self,
        listener: TcpListener,
        signal: impl Future<Output = ()> + Send + 'static,
    ) -> std::io::Result<()> {
        let svc = self.clone();
        axum::serve(listener, self.router())
            .with_graceful_shutdown(async move {
                signal.await;
                svc.shutdown().await;
            })
            .await
    }

    fn authorized(&self, query: &HashMap<String, String>, headers: &HeaderMap) -> bool {
        let Some(expected) = &self.inner.auth_token else {
            return true;
        };
        let bearer = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        query.get("token").map(String::as_str) == Some(expected) || bearer == Some(expected)
    }

    async fn handle_socket(self, socket: WebSocket) {
        let (mut sink, mut stream) = socket.split();
        let (tx, mut rx) = mpsc::unbounded_channel::<WireMessage>();
        let writer = tokio::spawn(async move {
            while let Some(m) = rx.recv().await {
                let last = m.kind == MessageType::SessionClosed;
                if sink.send(Message::Text(m.to_json().into())).await.is_err() {
                    break;
                }
                if last {
                    break;
                }
            }
            let _ = sink.close().await;
        });
        let mut active: Option<SessionHandle> = None;
        let mut last_seq: Option<u64> = None;
        let reject =
            |tx: &mpsc::UnboundedSender<WireMessage>, h: &Option<SessionHandle>, reason: String| {
                let _ = tx.send(WireMessage::error(
                    h.as_ref().map(|h| h.id.as_str()),
                    None,
                    reason,
                ));
            };
        while let Some(Ok(msg)) = stream.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                Message::Binary(_) => {
                    reject(&tx, &active, "binary frames are not supported".into());
                    continue;
                }
                _ => continue,
            };
            let frame = match WireMessage::parse(text.as_str()) {
                Ok(f) if f.direction == Direction::ClientToServer => f,
                Ok(_) => {
                    reject(&tx, &active, "expected a client_to_server frame".into());
                    continue;
                }
                Err(e) => {
                    reject(&tx, &active, e.to_string());
                    continue;
                }
            };
            match (frame.kind, &active) {
                (MessageType::Open, Some(_)) => reject(&tx, &active, "session already open".into()),
                (MessageType::Open, None) => {
                    let opened = SessionOverrides::parse(frame.payload.as_deref())
                        .map_err(ServiceError::from)
                        .and_then(|o| self.open_session(&o, tx.clone()));
                    match opened {
                        Ok(h) => active = Some(h),
                        Err(e) => reject(&tx, &active, e.to_string()),
                    }
                }
                (MessageType::InputChunk, None) => reject(&tx, &active, "no open session".into()),
                (MessageType::InputChunk, Some(h)) => {
                    if frame
                        .session_id
                        .as_deref()
                        .is_some_and(|s| s != h.id.as_str())
                    {
                        reject(&tx, &active, "input for another session".into());
                        continue;
                    }
                    if let Some(seq) = frame.tick_index {
                        if last_seq.is_some_and(|l| seq <= l) {
                            reject(
                                &tx,
                                &active,
                                format!("input tick_index {seq} is not increasing"),
                            );
                            continue;
                        }
                        last_seq = Some(seq);
                    }
                    let payload = frame.payload.as_deref().unwrap_or_default();
                    if let Err(e) = h.session.submit_input(payload) {
                        reject(&tx, &active, e.to_string());
                    }
                    debug!(session = %h.id, words = payload.split_whitespace().count(), "input accepted");
                }
                (MessageType::SessionClosed, _) => break,
                (kind, _) => reject(&tx, &active, format!("unexpected {kind:?} frame")),
            }
        }
        if let Some(h) = active {
            self.close_session(&h.id).await;
        }
        drop(tx);
        let _ = writer.await;
    }
}

fn tick_frame(sid: &str, outcome: &duplex_core::session::TickOutcome) -> WireMessage {
    if let Some(e) = &outcome.error {
        return WireMessage::error(
            Some(sid),
            Some(outcome.clock_tick),
            format!("backend error: {e}"),
        );
    }
    match outcome.output.payload() {
        Some(text) => WireMessage::output(sid, outcome.clock_tick, text, outcome.terminal),
        None => WireMessage::idle(sid, outcome.clock_tick),
    }
}

/// Runs ticks until stopped, emitting exactly one frame per tick.
/// Driver inputs: the open ack to send first, then close and shutdown flags.
struct Signals {
    ready: oneshot::Receiver<WireMessage>,
    stop: watch::Receiver<bool>,
    shutdown: watch::Receiver<bool>,
}

async fn drive(
    session: Arc<Session>,
    backend: Arc<dyn GeneratorBackend>,
    writer: TranscriptWriter,
    mut ticker: Ticker,
    out: mpsc::UnboundedSender<WireMessage>,
    signals: Signals,
) -> Outcome {
    let Signals {
        ready,
        mut stop,
        mut shutdown,
    } = signals;
    if let Ok(ack) = ready.await {
        let _ = out.send(ack);
    }
    let sid = session.with_state(|s| s.id().to_string());
    let mut writer = Some(writer);
    let mut outcome = Outcome::Closed;
    let reason = loop {
        tokio::select! {
            biased;
            _ = stop.wait_for(|s| *s) => break "client closed",
            _ = shutdown.wait_for(|s| *s) => break "server shutting down",
            t = ticker.next() => if t.is_none() { break "clock stopped" },
        }
        let (s, b, mut w) = (session.clone(), backend.clone(), writer.take());
        let joined = tokio::task::spawn_blocking(move || {
            let result = s.tick(b.as_ref());
            let mut write_err = None;
            if let (Ok(o), Some(w)) = (&result, w.as_mut()) {
                if let Some(i) = o.recorded {
                    let pair = SlicePair::new(i, o.input.clone(), o.output.clone(), o.terminal)
                        .expect("recorded pairs are well formed");
                    write_err = w.append(&pair, o.clock_tick).err();
                }
            }
            (result, w, write_err)
        })
        .await;
        let Ok((result, w, write_err)) = joined else {
            outcome = Outcome::Errored;
            break "tick panicked";
        };
        writer = w;
        if let Some(e) = write_err {
            warn!(session = %sid, error = %e, "transcript write failed");
            outcome = Outcome::Errored;
        }
        match result {
            Ok(o) => {
                let _ = out.send(tick_frame(&sid, &o));
            }
            Err(e) => {
                let _ = out.send(WireMessage::error(Some(&sid), None, e.to_string()));
                outcome = Outcome::Errored;
                break "session error";
            }
        }
    };
    if let Some(w) = writer {
        let flushed = tokio::task::spawn_blocking(move || w.finish(outcome)).await;
        if !matches!(flushed, Ok(Ok(()))) {
            warn!(session = %sid, "transcript could not be finalized");
        }
    }
    let _ = out.send(WireMessage::closed(&sid, reason));
    outcome
}

async fn duplex_ws(
    State(svc): State<Service>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
    ws: WebSocketUpgrade,
) -> Response {
    if !svc.authorized(&query, &headers) {
        return StatusCode::UNAUTHORIZED.into_response();
    }
    ws.on_upgrade(move |socket| svc.handle_socket(socket))
}

async fn health(State(svc): State<Service>) -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok", "sessions": svc.sessions().len()}))
}
