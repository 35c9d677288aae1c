use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use duplex_core::backends::{
    BackendError, Chunk, CompletionRule, GenerationRequest, GeneratorBackend, InterruptionBehavior,
    ResponseTemplate, ScriptedBackend, ScriptedRule,
};
use duplex_core::session::SessionId;
use duplex_service::{
    MessageType, MonotoneCheck, Outcome, Service, ServiceConfig, TickSource, VirtualClock,
    WireMessage,
};
use futures::{SinkExt, StreamExt};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

fn rule() -> ScriptedRule {
    ScriptedRule {
        completion: CompletionRule::Terminators {
            suffixes: vec!["?".into()],
        },
        response: ResponseTemplate::Template {
            template: "Let me explain {query} in some detail, since it is a topic with a long history and many parts, each of which deserves a careful look before we move on to the next question you might have.".into(),
        },
        interruption: InterruptionBehavior::Terminate,
    }
}

struct Server {
    svc: Service,
    addr: SocketAddr,
    clock: VirtualClock,
    _dir: tempfile::TempDir,
}

async fn start_with(backend: Arc<dyn GeneratorBackend>, auth_token: Option<&str>) -> Server {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        transcript_dir: dir.path().to_owned(),
        auth_token: auth_token.map(str::to_owned),
        ..Default::default()
    };
    let clock = VirtualClock::new();
    let svc = Service::new(&cfg, backend, TickSource::Virtual(clock.clone())).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(svc.clone().serve(listener, std::future::pending()));
    Server {
        svc,
        addr,
        clock,
        _dir: dir,
    }
}

async fn start() -> Server {
    start_with(Arc::new(ScriptedBackend::new(rule())), None).await
}

async fn connect(addr: SocketAddr, query: &str) -> Ws {
    tokio_tungstenite::connect_async(format!("ws://{addr}/duplex{query}"))
        .await
        .unwrap()
        .0
}

async fn send(ws: &mut Ws, m: &WireMessage) {
    ws.send(Message::Text(m.to_json().into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> WireMessage {
    loop {
        let msg = tokio::time::timeout(Duration::from_secs(10), ws.next())
            .await
            .expect("frame within timeout")
            .expect("stream open")
            .unwrap();
        if let Message::Text(t) = msg {
            return WireMessage::parse(t.as_str()).unwrap();
        }
    }
}

async fn open(ws: &mut Ws, overrides: Option<&str>) -> WireMessage {
    send(ws, &WireMessage::client_open(overrides.map(str::to_owned))).await;
    recv(ws).await
}

async fn open_ok(ws: &mut Ws) -> SessionId {
    let m = open(ws, None).await;
    assert_eq!(m.kind, MessageType::Open, "{m:?}");
    SessionId::new(m.session_id.unwrap())
}

/// Sends input and waits until the session has buffered it, so the next
/// clock advance sees it.
async fn input(srv: &Server, ws: &mut Ws, id: &SessionId, text: &str) {
    let before = srv.svc.snapshot(id).unwrap().pending_input().len();
    send(ws, &WireMessage::client_input(None, text)).await;
    for _ in 0..1000 {
        if srv.svc.snapshot(id).unwrap().pending_input().len() > before {
            return;
        }
        tokio::time::sleep(Duration::from_millis(1)).await;
    }
    panic!("input never reached the session");
}

async fn ticks(srv: &Server, ws: &mut Ws, n: u64) -> Vec<WireMessage> {
    srv.clock.advance(n);
    let mut out = Vec::new();
    while out.len() < n as usize {
        let m = recv(ws).await;
        assert!(m.kind.is_tick_frame(), "{m:?}");
        out.push(m);
    }
    out
}

#[tokio::test]
async fn default_open_uses_protocol_defaults() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    let m = open(&mut ws, None).await;
    assert_eq!(m.kind, MessageType::Open);
    let cfg: serde_json::Value = serde_json::from_str(m.payload.as_deref().unwrap()).unwrap();
    assert_eq!(cfg["tick_seconds"], 2.0);
    assert_eq!(cfg["max_tokens_per_chunk"], 10);
}

#[tokio::test]
async fn zero_tick_is_rejected_and_socket_stays_usable() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    let m = open(&mut ws, Some(r#"{"tick_seconds": 0}"#)).await;
    assert_eq!(m.kind, MessageType::Error);
    assert!(m.payload.unwrap().contains("invalid config"));
    open_ok(&mut ws).await;
}

#[tokio::test]
async fn two_opens_have_distinct_ids_and_clocks() {
    let srv = start().await;
    let mut a = connect(srv.addr, "").await;
    let mut b = connect(srv.addr, "").await;
    let ida = open_ok(&mut a).await;
    let fa = ticks(&srv, &mut a, 3).await;
    let idb = open_ok(&mut b).await;
    assert_ne!(ida, idb);
    srv.clock.advance(2);
    let mut fa2 = vec![recv(&mut a).await, recv(&mut a).await];
    let fb = vec![recv(&mut b).await, recv(&mut b).await];
    fa2.splice(0..0, fa);
    let idx = |v: &[WireMessage]| v.iter().map(|m| m.tick_index.unwrap()).collect::<Vec<_>>();
    assert_eq!(idx(&fa2), vec![0, 1, 2, 3, 4]);
    assert_eq!(idx(&fb), vec![0, 1]);
}

#[tokio::test]
async fn silent_client_gets_idle_after_response() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    let id = open_ok(&mut ws).await;
    input(&srv, &mut ws, &id, "why ?").await;
    let frames = ticks(&srv, &mut ws, 30).await;
    let last_text = frames
        .iter()
        .rposition(|m| m.kind == MessageType::OutputChunk)
        .unwrap();
    assert!(frames[last_text].terminal);
    assert!(frames[last_text + 1..]
        .iter()
        .all(|m| m.kind == MessageType::IdleNotice));
    let text: Vec<&str> = frames.iter().filter_map(|m| m.payload.as_deref()).collect();
    assert!(text.join(" ").starts_with("Let me explain why ?"));
}

#[tokio::test]
async fn input_during_output_redirects_the_response() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    let id = open_ok(&mut ws).await;
    input(&srv, &mut ws, &id, "rivers ?").await;
    let first = ticks(&srv, &mut ws, 3).await;
    assert_eq!(first[0].kind, MessageType::IdleNotice);
    assert_eq!(first[1].kind, MessageType::OutputChunk);
    assert!(!first[2].terminal);
    input(&srv, &mut ws, &id, "lakes ?").await;
    let after = ticks(&srv, &mut ws, 2).await;
    let text: Vec<&str> = after.iter().filter_map(|m| m.payload.as_deref()).collect();
    assert!(text.join(" ").contains("lakes"), "{after:?}");
    let state = srv.svc.snapshot(&id).unwrap();
    let inputs: Vec<_> = state
        .history()
        .iter()
        .filter_map(|p| p.input().payload())
        .collect();
    assert_eq!(inputs, vec!["rivers ?", "lakes ?"]);
}

/// Sleeps before answering so input can land mid-call.
struct Slow {
    inner: ScriptedBackend,
    delay: Duration,
}

impl GeneratorBackend for Slow {
    fn generate(&self, req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        std::thread::sleep(self.delay);
        self.inner.generate(req)
    }
}

#[tokio::test]
async fn mid_call_input_discards_the_in_flight_chunk() {
    let backend = Arc::new(Slow {
        inner: ScriptedBackend::new(rule()),
        delay: Duration::from_millis(150),
    });
    let srv = start_with(backend, None).await;
    let mut ws = connect(srv.addr, "").await;
    let id = open_ok(&mut ws).await;
    input(&srv, &mut ws, &id, "rivers ?").await;
    let f = ticks(&srv, &mut ws, 3).await;
    assert!(f[1..].iter().all(|m| m.kind == MessageType::OutputChunk));
    let before = srv.svc.snapshot(&id).unwrap().history().len();
    srv.clock.advance(1);
    tokio::time::sleep(Duration::from_millis(40)).await;
    send(&mut ws, &WireMessage::client_input(None, "stop")).await;
    let m = recv(&mut ws).await;
    assert_eq!(
        m.kind,
        MessageType::IdleNotice,
        "cancelled chunk must not be sent"
    );
    let state = srv.svc.snapshot(&id).unwrap();
    assert_eq!(state.history().len(), before);
    let next = ticks(&srv, &mut ws, 1).await;
    assert_eq!(next[0].kind, MessageType::IdleNotice);
    let state = srv.svc.snapshot(&id).unwrap();
    assert_eq!(
        state.history().back().unwrap().input().payload(),
        Some("stop")
    );
}

/// Fails every other call.
struct Flaky(AtomicU64);

impl GeneratorBackend for Flaky {
    fn generate(&self, _req: &GenerationRequest<'_>) -> Result<Chunk, BackendError> {
        if self.0.fetch_add(1, Ordering::SeqCst).is_multiple_of(2) {
            Err(BackendError::Timeout("no route".into()))
        } else {
            Ok(Chunk::text("ok", false))
        }
    }
}

#[tokio::test]
async fn backend_errors_do_not_close_the_session() {
    let srv = start_with(Arc::new(Flaky(AtomicU64::new(0))), None).await;
    let mut ws = connect(srv.addr, "").await;
    open_ok(&mut ws).await;
    let frames = ticks(&srv, &mut ws, 6).await;
    let kinds: Vec<MessageType> = frames.iter().map(|m| m.kind).collect();
    use MessageType::*;
    assert_eq!(
        kinds,
        vec![Error, OutputChunk, Error, OutputChunk, Error, OutputChunk]
    );
    assert!(frames[0]
        .payload
        .as_deref()
        .unwrap()
        .starts_with("backend error"));
}

#[tokio::test]
async fn protocol_violations_get_error_frames() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    send(&mut ws, &WireMessage::client_input(None, "hi")).await;
    assert_eq!(recv(&mut ws).await.kind, MessageType::Error);
    ws.send(Message::Text("{not json".into())).await.unwrap();
    assert_eq!(recv(&mut ws).await.kind, MessageType::Error);
    let id = open_ok(&mut ws).await;
    assert_eq!(open(&mut ws, None).await.kind, MessageType::Error);
    send(&mut ws, &WireMessage::client_input(Some(5), "a")).await;
    send(&mut ws, &WireMessage::client_input(Some(5), "b")).await;
    let m = recv(&mut ws).await;
    assert_eq!(m.kind, MessageType::Error);
    assert!(m.payload.unwrap().contains("not increasing"));
    assert_eq!(srv.svc.snapshot(&id).unwrap().pending_input(), "a");
}

#[tokio::test]
async fn close_flushes_a_replayable_transcript() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    let id = open_ok(&mut ws).await;
    input(&srv, &mut ws, &id, "tell me about the ocean ?").await;
    ticks(&srv, &mut ws, 4).await;
    input(&srv, &mut ws, &id, "and mountains ?").await;
    ticks(&srv, &mut ws, 20).await;
    let live = srv.svc.snapshot(&id).unwrap();
    send(&mut ws, &WireMessage::client_close()).await;
    let m = recv(&mut ws).await;
    assert_eq!(m.kind, MessageType::SessionClosed);
    let t = srv.svc.store().load(&id).unwrap();
    assert_eq!(t.outcome, Some(Outcome::Closed));
    let replayed = t.replay().unwrap();
    assert_eq!(replayed.history(), live.history());
    assert!(replayed.timed_history().eq(live.timed_history()));
    assert!(srv.svc.snapshot(&id).is_none());
}

#[tokio::test]
async fn disconnect_and_shutdown_finalize_transcripts() {
    let srv = start().await;
    let mut a = connect(srv.addr, "").await;
    let ida = open_ok(&mut a).await;
    ticks(&srv, &mut a, 2).await;
    drop(a);
    let mut clients = Vec::new();
    for _ in 0..3 {
        let mut ws = connect(srv.addr, "").await;
        let id = open_ok(&mut ws).await;
        clients.push((ws, id));
    }
    srv.svc.shutdown().await;
    for (ws, id) in &mut clients {
        let m = recv(ws).await;
        assert_eq!(m.kind, MessageType::SessionClosed);
        assert_eq!(m.payload.as_deref(), Some("server shutting down"));
        assert_eq!(
            srv.svc.store().load(id).unwrap().outcome,
            Some(Outcome::Closed)
        );
    }
    for _ in 0..1000 {
        if srv.svc.store().load(&ida).unwrap().outcome.is_some() {
            break;
        }
        tokio::time::sleep(Duration::from_millis(2)).await;
    }
    let index = srv.svc.store().index().unwrap();
    assert_eq!(index.sessions.len(), 4);
    assert!(index
        .sessions
        .values()
        .all(|e| e.outcome == Some(Outcome::Closed)));
    let mut late = connect(srv.addr, "").await;
    assert_eq!(open(&mut late, None).await.kind, MessageType::Error);
}

#[tokio::test]
async fn static_token_guards_the_endpoint() {
    let srv = start_with(Arc::new(ScriptedBackend::new(rule())), Some("s3cret")).await;
    assert!(
        tokio_tungstenite::connect_async(format!("ws://{}/duplex", srv.addr))
            .await
            .is_err()
    );
    let mut ws = connect(srv.addr, "?token=s3cret").await;
    open_ok(&mut ws).await;
}

#[tokio::test]
async fn health_reports_open_sessions() {
    let srv = start().await;
    let mut ws = connect(srv.addr, "").await;
    open_ok(&mut ws).await;
    let mut s = TcpStream::connect(srv.addr).await.unwrap();
    s.write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut body = String::new();
    s.read_to_string(&mut body).await.unwrap();
    assert!(body.starts_with("HTTP/1.1 200"));
    assert!(body.contains(r#""sessions":1"#), "{body}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_get_one_frame_per_tick() {
    let srv = start().await;
    let sessions = 10;
    let n = 200u64;
    let mut clients = Vec::new();
    for _ in 0..sessions {
        let mut ws = connect(srv.addr, "").await;
        let id = open_ok(&mut ws).await;
        clients.push((ws, id));
    }
    let readers: Vec<_> = clients
        .into_iter()
        .enumerate()
        .map(|(k, (mut ws, id))| {
            tokio::spawn(async move {
                let mut check = MonotoneCheck::default();
                let mut seen = Vec::new();
                let mut sent = 0u64;
                while (seen.len() as u64) < n {
                    let m = recv(&mut ws).await;
                    check.check(&m).unwrap();
                    assert!(m.kind.is_tick_frame());
                    seen.push(m.tick_index.unwrap());
                    if (seen.len() + k) % 17 == 0 {
                        sent += 1;
                        send(
                            &mut ws,
                            &WireMessage::client_input(Some(sent), "what is this ?"),
                        )
                        .await;
                    }
                }
                (ws, id, seen)
            })
        })
        .collect();
    for _ in 0..n {
        srv.clock.advance(1);
        tokio::task::yield_now().await;
    }
    for r in readers {
        let (mut ws, id, seen) = r.await.unwrap();
        assert_eq!(seen, (0..n).collect::<Vec<_>>());
        let live = srv.svc.snapshot(&id).unwrap();
        send(&mut ws, &WireMessage::client_close()).await;
        assert_eq!(recv(&mut ws).await.kind, MessageType::SessionClosed);
        let replayed = srv.svc.store().load(&id).unwrap().replay().unwrap();
        assert_eq!(replayed.history(), live.history());
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input(u8),
    Advance(u8),
    Pause,
}

fn op() -> impl proptest::strategy::Strategy<Value = Op> {
    use proptest::prelude::*;
    prop_oneof![
        (1u8..12).prop_map(Op::Input),
        (1u8..6).prop_map(Op::Advance),
        Just(Op::Pause),
    ]
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
    #[test]
    fn random_interleavings_keep_ticks_monotone(ops in proptest::collection::vec(op(), 1..40)) {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let srv = start().await;
            let mut ws = connect(srv.addr, "").await;
            let id = open_ok(&mut ws).await;
            let mut advanced = 0u64;
            for (k, op) in ops.iter().enumerate() {
                match op {
                    Op::Input(n) => {
                        let mut words: Vec<String> = (0..*n).map(|w| format!("w{w}")).collect();
                        if k % 2 == 0 {
                            words.push("?".into());
                        }
                        send(&mut ws, &WireMessage::client_input(Some(k as u64), &words.join(" "))).await;
                    }
                    Op::Advance(n) => {
                        srv.clock.advance(*n as u64);
                        advanced += *n as u64;
                    }
                    Op::Pause => tokio::time::sleep(Duration::from_millis(2)).await,
                }
            }
            let mut check = MonotoneCheck::default();
            let mut seen = Vec::new();
            while (seen.len() as u64) < advanced {
                let m = recv(&mut ws).await;
                check.check(&m).unwrap();
                assert!(m.kind.is_tick_frame(), "{m:?}");
                seen.push(m.tick_index.unwrap());
            }
            assert_eq!(seen, (0..advanced).collect::<Vec<_>>());
            let live = srv.svc.snapshot(&id).unwrap();
            let ticks: Vec<u64> = live.history().iter().map(|p| p.tick_index()).collect();
            assert!(ticks.windows(2).all(|w| w[1] == w[0] + 1));
            send(&mut ws, &WireMessage::client_close()).await;
            assert_eq!(recv(&mut ws).await.kind, MessageType::SessionClosed);
            let replayed = srv.svc.store().load(&id).unwrap().replay().unwrap();
            assert_eq!(replayed.history(), live.history());
        });
    }
}
