//! A deterministic OpenAI-compatible chat-completions server for tests.
//!
//! The server runs on its own thread and runtime, so it works from both sync
//! and async tests. By default it answers every request with a well-formed
//! reply for whichever prompt it recognizes, with scores derived from a hash
//! of the image payload.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// What the stub sends back for one request.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    /// A 200 chat-completions envelope whose message content is this text.
    Content(String),
    /// A bare status with this body.
    Status(u16, String),
}

/// Parts of an incoming chat request.
#[derive(Debug, Clone, Default)]
pub struct ChatRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub image_url: String,
    pub body: Value,
}

impl ChatRequest {
    pub fn from_body(body: Value) -> Self {
        let str_at = |p: &str| body.pointer(p).and_then(Value::as_str).unwrap_or_default().to_owned();
        let mut req = ChatRequest {
            model: str_at("/model"),
            ..Default::default()
        };
        for m in body.get("messages").and_then(Value::as_array).into_iter().flatten() {
            let role = m.get("role").and_then(Value::as_str).unwrap_or_default();
            match m.get("content") {
                Some(Value::String(s)) if role == "system" => req.system = s.clone(),
                Some(Value::String(s)) => req.user = s.clone(),
                Some(Value::Array(parts)) => {
                    for p in parts {
                        if let Some(t) = p.get("text").and_then(Value::as_str) {
                            req.user = t.to_owned();
                        }
                        if let Some(u) = p.pointer("/image_url/url").and_then(Value::as_str) {
                            req.image_url = u.to_owned();
                        }
                    }
                }
                _ => {}
            }
        }
        req.body = body;
        req
    }

    /// FNV-1a hash of the image payload.
    pub fn image_hash(&self) -> u64 {
        self.image_url
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
    }
}

pub type Responder = Arc<dyn Fn(&ChatRequest) -> Reply + Send + Sync>;

/// Answers in the schema the prompt asks for.
pub fn default_reply(req: &ChatRequest) -> Reply {
    let h = req.image_hash();
    let score = (h % 101) as f64;
    let text = if req.user.contains("has_blur") {
        let bit = |i: u32| (h >> (8 + i)) & 1 == 1;
        json!({
            "quality_score": score,
            "has_blur": bit(0),
            "has_noise": bit(1),
            "has_low_res": bit(2),
            "has_compression": bit(3),
            "has_bad_lighting": bit(4),
        })
        .to_string()
    } else if req.user.contains("\"Sharpness\"") {
        let pick = |opts: &[&str], shift: u32| opts[((h >> shift) as usize) % opts.len()].to_owned();
        json!({
            "Sharpness": pick(&["Clear", "Slightly Blurred", "Moderately Blurred", "Strongly Blurred"], 8),
            "Resolution": pick(&["High", "Medium", "Low", "Very Low"], 12),
            "Lighting": pick(&["Balanced", "Slightly Dark", "Moderately Dark", "Strongly Dark",
                "Slightly Bright", "Moderately Bright", "Strongly Bright"], 16),
            "Compression": pick(&["None", "Minimal", "Moderate", "Severe"], 20),
            "Quality Score": score,
        })
        .to_string()
    } else {
        let key = ["Utility Score", "Reliability Score"]
            .into_iter()
            .find(|k| req.user.contains(&format!("\"{k}\"")))
            .unwrap_or("Quality Score");
        json!({ key: score }).to_string()
    };
    Reply::Content(text)
}

pub fn envelope(model: &str, content: &str) -> Value {
    json!({
        "id": "stub",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    })
}

pub struct StubBuilder {
    responder: Responder,
    delay: Duration,
    script: VecDeque<u16>,
}

impl Default for StubBuilder {
    fn default() -> Self {
        Self {
            responder: Arc::new(default_reply),
            delay: Duration::ZERO,
            script: VecDeque::new(),
        }
    }
}

impl StubBuilder {
    pub fn responder(mut self, f: impl Fn(&ChatRequest) -> Reply + Send + Sync + 'static) -> Self {
        self.responder = Arc::new(f);
        self
    }

    /// Fixed processing time per request.
    pub fn delay(mut self, d: Duration) -> Self {
        self.delay = d;
        self
    }

    /// The first requests get these statuses, in order, before the responder
    /// takes over.
    pub fn fail_first(mut self, statuses: impl IntoIterator<Item = u16>) -> Self {
        self.script.extend(statuses);
        self
    }

    pub fn start(self) -> StubServer {
        StubServer::start(self)
    }
}

struct Shared {
    responder: Responder,
    delay: Duration,
    script: Mutex<VecDeque<u16>>,
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    log: Mutex<Vec<ChatRequest>>,
}

struct InFlight<'a>(&'a Shared);

impl<'a> InFlight<'a> {
    fn enter(s: &'a Shared) -> Self {
        let now = s.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        s.max_in_flight.fetch_max(now, Ordering::SeqCst);
        InFlight(s)
    }
}

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.in_flight.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn handle(State(s): State<Arc<Shared>>, body: Bytes) -> Response {
    s.requests.fetch_add(1, Ordering::SeqCst);
    let _guard = InFlight::enter(&s);
    if !s.delay.is_zero() {
        tokio::time::sleep(s.delay).await;
    }
    let scripted = s.script.lock().unwrap().pop_front();
    if let Some(status) = scripted {
        return status_response(status, "scripted failure");
    }
    let Ok(value) = serde_json::from_slice::<Value>(&body) else {
        return status_response(400, "body is not JSON");
    };
    let req = ChatRequest::from_body(value);
    let reply = (s.responder)(&req);
    let model = req.model.clone();
    s.log.lock().unwrap().push(req);
    match reply {
        Reply::Content(text) => axum::Json(envelope(&model, &text)).into_response(),
        Reply::Status(code, body) => status_response(code, &body),
    }
}

fn status_response(code: u16, body: &str) -> Response {
    let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, body.to_owned()).into_response()
}

pub struct StubServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn builder() -> StubBuilder {
        StubBuilder::default()
    }

    /// A server with the default responder.
    pub fn spawn() -> Self {
        StubBuilder::default().start()
    }

    fn start(b: StubBuilder) -> Self {
        let shared = Arc::new(Shared {
            responder: b.responder,
            delay: b.delay,
            script: Mutex::new(b.script),
            requests: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let listener = std::net::TcpListener::bind("127.0.0.1:0").expect("bind stub listener");
        listener.set_nonblocking(true).expect("nonblocking listener");
        let addr = listener.local_addr().expect("listener address");
        let (tx, rx) = oneshot::channel::<()>();
        let app = Router::new()
            .route("/chat/completions", post(handle))
            .route("/v1/chat/completions", post(handle))
            .with_state(shared.clone());
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("stub runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("tokio listener");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .expect("stub server");
            });
        });
        Self {
            addr,
            shared,
            shutdown: Some(tx),
            thread: Some(thread),
        }
    }

    /// Base URL to put in an endpoint config, e.g. `http://127.0.0.1:PORT/v1`.
    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    pub fn requests(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Highest number of requests observed in flight at once.
    pub fn max_in_flight(&self) -> usize {
        self.shared.max_in_flight.load(Ordering::SeqCst)
    }

    /// Requests that reached the responder, in arrival order.
    pub fn received(&self) -> Vec<ChatRequest> {
        self.shared.log.lock().unwrap().clone()
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
