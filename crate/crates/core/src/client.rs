//! Client for OpenAI-compatible chat-completions endpoints.
//!
//! Each query sends the rendered prompt plus the image as a base64 data URI.
//! Raw response bodies are cached on disk by (model, prompt, image) digest.
//! Transport errors, 5xx and 429 responses are retried with exponential
//! backoff. Unparseable replies are results with a failed outcome, not errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use base64::Engine;
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{Manifest, ScoreRecord, ScoreVariant};
use crate::protocol::{parse_response, render_prompt, Judgment, ParseOutcome, ParseStatus, PromptVariant, RenderedPrompt};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("image {id:?} is not a decodable raster: {message}")]
    InvalidImage { id: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn default_max_tokens() -> u32 {
    256
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_in_flight() -> usize {
    16
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// First retry delay; doubles on each further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key_env: None,
            temperature: 0.0,
            max_tokens: default_max_tokens(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let fail = |m: &str| Err(ClientError::Config(m.to_owned()));
        if self.base_url.is_empty() {
            return fail("base_url is empty");
        }
        if self.model.is_empty() {
            return fail("model is empty");
        }
        if self.max_in_flight < 1 {
            return fail("max_in_flight must be at least 1");
        }
        if !(self.temperature >= 0.0) {
            return fail("temperature must be non-negative");
        }
        if self.max_tokens < 1 {
            return fail("max_tokens must be positive");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return fail("timeout_secs must be positive");
        }
        Ok(())
    }

    pub fn endpoint_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub model: String,
    pub prompt_hash: String,
    pub image_hash: String,
}

impl CacheKey {
    pub fn new(model: &str, prompt: &RenderedPrompt, image: &[u8]) -> Self {
        Self {
            model: model.to_owned(),
            prompt_hash: hex(&Sha256::digest(prompt.cache_text().as_bytes())),
            image_hash: hex(&Sha256::digest(image)),
        }
    }

    /// File name of the cache entry.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [&self.model, &self.prompt_hash, &self.image_hash] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex(&h.finalize())
    }
}

/// One file per key holding the raw response body. Writes go through a
/// temporary file and a rename so readers never see partial entries.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ClientError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| ClientError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(format!("{}.json", key.digest()))
    }

    pub fn get(&self, key: &CacheKey) -> Option<String> {
        fs::read_to_string(self.path(key)).ok()
    }

    pub fn put(&self, key: &CacheKey, body: &str) -> Result<(), ClientError> {
        let target = self.path(key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            key.digest(),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let io = |source| ClientError::Io {
            path: target.clone(),
            source,
        };
        fs::write(&tmp, body).map_err(io)?;
        fs::rename(&tmp, &target).map_err(io)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub image_id: String,
    pub variant: PromptVariant,
    pub outcome: ParseOutcome<Judgment>,
    /// Wall-clock time of the successful request; absent for cache hits and
    /// for images that never got a response.
    pub latency: Option<Duration>,
    pub from_cache: bool,
}

impl QueryResult {
    fn failed(image_id: &str, variant: PromptVariant, diagnostic: String) -> Self {
        Self {
            image_id: image_id.to_owned(),
            variant,
            outcome: ParseOutcome::failed("", diagnostic),
            latency: None,
            from_cache: false,
        }
    }

    pub fn to_score_record(&self, source: &str) -> ScoreRecord {
        let payload = self.outcome.payload;
        ScoreRecord {
            image_id: self.image_id.clone(),
            source: source.to_owned(),
            variant: ScoreVariant::from(self.variant),
            score: payload.map(|j| j.score()),
            attributes: match payload {
                Some(Judgment::Attributes(a)) => Some(a),
                _ => None,
            },
            flags: match payload {
                Some(Judgment::Detection(d)) => Some(d),
                _ => None,
            },
            raw: self.outcome.raw.clone().filter(|r| !r.is_empty()),
            parse_status: self.outcome.status,
        }
    }
}

/// Extracts the assistant text from a chat-completions body.
pub fn extract_content(body: &str) -> Result<String, String> {
    let v: Value = serde_json::from_str(body).map_err(|e| format!("response body is not JSON: {e}"))?;
    let content = v
        .pointer("/choices/0/message/content")
        .ok_or_else(|| "response has no choices[0].message.content".to_owned())?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<Vec<_>>()
            .join("")),
        other => Err(format!("unexpected content type: {other}")),
    }
}

pub fn image_data_uri(bytes: &[u8]) -> String {
    let mime = match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "image/png",
        Ok(image::ImageFormat::WebP) => "image/webp",
        Ok(image::ImageFormat::Gif) => "image/gif",
        Ok(image::ImageFormat::Bmp) => "image/bmp",
        _ => "image/jpeg",
    };
    format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes))
}

pub fn request_body(config: &EndpointConfig, prompt: &RenderedPrompt, image: &[u8]) -> Value {
    json!({
        "model": config.model,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": [
                {"type": "text", "text": prompt.user},
                {"type": "image_url", "image_url": {"url": image_data_uri(image)}}
            ]}
        ]
    })
}

enum Attempt {
    Success(String, Duration),
    Retry(String),
    Fatal(ClientError),
}

pub struct VlmClient {
    config: EndpointConfig,
    http: reqwest::Client,
    cache: Option<ResponseCache>,
    api_key: Option<String>,
}

impl VlmClient {
    pub fn new(config: EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                ClientError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let cache = config.cache_dir.as_ref().map(ResponseCache::open).transpose()?;
        Ok(Self {
            config,
            http,
            cache,
            api_key,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    async fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.http.post(self.config.endpoint_url()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let start = Instant::now();
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("{e}")),
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        let elapsed = start.elapsed();
        if status.is_success() {
            Attempt::Success(text, elapsed)
        } else if status.is_server_error() || status.as_u16() == 429 {
            Attempt::Retry(format!("HTTP {}", status.as_u16()))
        } else {
            Attempt::Fatal(ClientError::Endpoint {
                status: status.as_u16(),
                body: text,
            })
        }
    }

    /// Sends one request with retries; returns the body and the latency of
    /// the successful attempt.
    async fn send(&self, body: &Value) -> Result<(String, Duration), ClientError> {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                tokio::time::sleep(Duration::from_millis(delay)).await;
            }
            match self.attempt(body).await {
                Attempt::Success(text, latency) => return Ok((text, latency)),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(reason) => {
                    tracing::debug!(attempt, "retrying after {reason}");
                    last = reason;
                }
            }
        }
        match last.strip_prefix("HTTP ").and_then(|s| s.parse().ok()) {
            Some(status) => Err(ClientError::Endpoint {
                status,
                body: format!("still failing after {} retries", self.config.retries),
            }),
            None => Err(ClientError::Transport(last)),
        }
    }

    /// Scores one image. Only transport and endpoint errors are `Err`.
    pub async fn query_image(&self, image_id: &str, image: &[u8], variant: PromptVariant) -> Result<QueryResult, ClientError> {
        image::load_from_memory(image).map_err(|e| ClientError::InvalidImage {
            id: image_id.to_owned(),
            message: e.to_string(),
        })?;
        let prompt = render_prompt(variant);
        let key = CacheKey::new(&self.config.model, &prompt, image);
        let finish = |body: &str, latency: Option<Duration>, from_cache: bool| {
            let outcome = match extract_content(body) {
                Ok(content) => parse_response(variant, &content),
                Err(diag) => ParseOutcome::failed(body, diag),
            };
            QueryResult {
                image_id: image_id.to_owned(),
                variant,
                outcome,
                latency,
                from_cache,
            }
        };
        if let Some(body) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return Ok(finish(&body, None, true));
        }
        let (body, latency) = self.send(&request_body(&self.config, &prompt, image)).await?;
        if let Some(cache) = &self.cache {
            if extract_content(&body).is_ok() {
                if let Err(e) = cache.put(&key, &body) {
                    tracing::warn!("cache write failed: {e}");
                }
            }
        }
        Ok(finish(&body, Some(latency.max(Duration::from_nanos(1))), false))
    }

    /// Scores every manifest image with at most `max_in_flight` requests in
    /// flight. Results follow manifest order. Per-image problems become
    /// failed results; a transport error before any success aborts the batch.
    pub async fn batch_score(&self, manifest: &Manifest, variant: PromptVariant) -> Result<Vec<QueryResult>, ClientError> {
        let any_success = Arc::new(AtomicBool::new(false));
        let abort = Arc::new(AtomicBool::new(false));
        let first_error: Arc<std::sync::Mutex<Option<String>>> = Default::default();

        let results: Vec<QueryResult> = stream::iter(manifest.iter())
            .map(|record| {
                let path = manifest.resolve(record);
                let (any_success, abort, first_error) = (any_success.clone(), abort.clone(), first_error.clone());
                async move {
                    let id = record.id.as_str();
                    if abort.load(Ordering::SeqCst) {
                        return QueryResult::failed(id, variant, "batch aborted".into());
                    }
                    let bytes = match tokio::fs::read(&path).await {
                        Ok(b) => b,
                        Err(e) => return QueryResult::failed(id, variant, format!("{}: {e}", path.display())),
                    };
                    match self.query_image(id, &bytes, variant).await {
                        Ok(r) => {
                            any_success.store(true, Ordering::SeqCst);
                            r
                        }
                        Err(e) => {
                            if matches!(e, ClientError::Transport(_)) && !any_success.load(Ordering::SeqCst) {
                                abort.store(true, Ordering::SeqCst);
                                first_error.lock().unwrap().get_or_insert_with(|| e.to_string());
                            }
                            tracing::warn!(id, "query failed: {e}");
                            QueryResult::failed(id, variant, e.to_string())
                        }
                    }
                }
            })
            .buffered(self.config.max_in_flight)
            .collect()
            .await;

        if abort.load(Ordering::SeqCst) && !any_success.load(Ordering::SeqCst) {
            let msg = first_error.lock().unwrap().clone().unwrap_or_default();
            return Err(ClientError::Transport(msg));
        }
        Ok(results)
    }
}

/// Runs [`VlmClient::batch_score`] on a fresh runtime.
pub fn batch_score_blocking(config: EndpointConfig, manifest: &Manifest, variant: PromptVariant) -> Result<Vec<QueryResult>, ClientError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| ClientError::Config(e.to_string()))?;
    let client = VlmClient::new(config)?;
    rt.block_on(client.batch_score(manifest, variant))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: usize,
    pub uncached: usize,
    pub cache_hits: usize,
    pub failed: usize,
    /// Mean milliseconds per uncached image; absent when nothing was sent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ms: Option<f64>,
    /// Images per second over the batch wall-clock, when measured.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
}

pub fn latency_report(results: &[QueryResult]) -> LatencyReport {
    let latencies: Vec<f64> = results
        .iter()
        .filter(|r| !r.from_cache)
        .filter_map(|r| r.latency)
        .map(|d| d.as_secs_f64() * 1e3)
        .collect();
    LatencyReport {
        count: results.len(),
        uncached: latencies.len(),
        cache_hits: results.iter().filter(|r| r.from_cache).count(),
        failed: results.iter().filter(|r| r.outcome.status == ParseStatus::Failed).count(),
        mean_ms: crate::stats::mean(&latencies),
        throughput: None,
    }
}

pub fn cache_dir_for(out: &Path) -> PathBuf {
    out.join("cache")
}
