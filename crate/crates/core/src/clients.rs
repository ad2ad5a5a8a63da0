//! Adapters for remote sentiment and OCR services, with a content-hash
//! cache, rate limiting, retries, and offline fixture replay.
//!
//! Cache and fixture directories share one layout: one JSON file per entry,
//! named `<sha256 hex>.json`. A fixture directory is simply a cache that
//! was recorded earlier. Two inputs with the same hash are treated as the
//! same input.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::sentiment::{ProviderError, SentimentProvider, SentimentScore};
use crate::speedtest::{OcrDocument, OcrToken};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClientError {
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("retries exhausted for items {0:?}")]
    TransientExhausted(Vec<usize>),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("image unavailable: {0}")]
    ImageUnavailable(String),
    #[error("no fixture for content hash {0}")]
    FixtureMiss(String),
    #[error("cache i/o: {0}")]
    Io(String),
}

impl From<io::Error> for ClientError {
    fn from(e: io::Error) -> Self {
        ClientError::Io(e.to_string())
    }
}

/// Lowercase hex SHA-256 of the input.
pub fn content_hash(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub max_rps: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_batch_size() -> usize {
    10
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, credential_env: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            credential_env: credential_env.into(),
            max_rps: 5.0,
            max_retries: 3,
            backoff_base_ms: 500,
            cache_dir: None,
            batch_size: default_batch_size(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.max_rps > 0.0 && self.max_rps.is_finite()) {
            return Err(ClientError::Config(format!("max_rps must be > 0, got {}", self.max_rps)));
        }
        if self.batch_size == 0 {
            return Err(ClientError::Config("batch_size must be > 0".into()));
        }
        if self.credential_env.is_empty() {
            return Err(ClientError::Config("credential_env is empty".into()));
        }
        Ok(())
    }

    fn credential(&self) -> Result<String, ClientError> {
        std::env::var(&self.credential_env)
            .map_err(|_| ClientError::AuthError(format!("{} is not set", self.credential_env)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub hash: String,
    pub provider: String,
    pub payload: String,
    pub stored_at: String,
}

#[derive(Debug, Clone)]
pub struct Cache {
    dir: PathBuf,
}

impl Cache {
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.json"))
    }

    pub fn get(&self, hash: &str) -> Option<CacheEntry> {
        let text = fs::read_to_string(self.path(hash)).ok()?;
        serde_json::from_str(&text).ok()
    }

    /// Store an entry unless one already exists for the hash. The file is
    /// written under a temporary name and renamed into place.
    pub fn put(&self, entry: &CacheEntry) -> io::Result<()> {
        let path = self.path(&entry.hash);
        if path.exists() {
            return Ok(());
        }
        let tmp = self
            .dir
            .join(format!(".{}.{}.tmp", entry.hash, std::process::id()));
        let mut text = serde_json::to_string_pretty(entry).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&tmp, text)?;
        fs::rename(&tmp, &path)
    }

    pub fn record(&self, provider: &str, input: &str, payload: String, stored_at: &str) -> io::Result<CacheEntry> {
        let entry = CacheEntry {
            hash: content_hash(input),
            provider: provider.to_string(),
            payload,
            stored_at: stored_at.to_string(),
        };
        self.put(&entry)?;
        Ok(entry)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.0.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Time only moves when someone sleeps.
#[derive(Debug, Default)]
pub struct VirtualClock(Mutex<Duration>);

impl VirtualClock {
    pub fn advance(&self, d: Duration) {
        *self.0.lock().expect("clock lock") += d;
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Duration {
        *self.0.lock().expect("clock lock")
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

/// Spaces requests at least `1/rate` apart and, for rates of one or more,
/// also caps the count in any trailing one-second window at `floor(rate)`.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    cap: usize,
    next: Duration,
    recent: VecDeque<Duration>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        assert!(rate > 0.0, "rate must be positive");
        Self {
            interval: Duration::from_nanos((1e9 / rate).ceil() as u64),
            cap: (rate.floor() as usize).max(1),
            next: Duration::ZERO,
            recent: VecDeque::new(),
        }
    }

    /// Block (on `clock`) until a request may be issued; returns its time.
    pub fn acquire(&mut self, clock: &dyn Clock) -> Duration {
        let second = Duration::from_secs(1);
        loop {
            let now = clock.now();
            while self.recent.front().is_some_and(|t| now >= *t + second) {
                self.recent.pop_front();
            }
            let mut wait_until = self.next.max(now);
            if self.recent.len() >= self.cap {
                wait_until = wait_until.max(self.recent[0] + second);
            }
            if wait_until > now {
                clock.sleep(wait_until - now);
                continue;
            }
            self.recent.push_back(now);
            self.next = now + self.interval;
            return now;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport: {0}")]
pub struct TransportError(pub String);

pub trait HttpTransport: Send + Sync {
    fn post_json(&self, url: &str, headers: &[(&str, &str)], body: &str) -> Result<HttpResponse, TransportError>;
    fn get(&self, url: &str) -> Result<HttpResponse, TransportError>;
}

/// Blocking HTTP over `ureq`.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl Default for UreqTransport {
    fn default() -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build();
        Self {
            agent: config.into(),
        }
    }
}

impl HttpTransport for UreqTransport {
    fn post_json(&self, url: &str, headers: &[(&str, &str)], body: &str) -> Result<HttpResponse, TransportError> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        let mut resp = req.send(body).map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }

    fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
        let mut resp = self.agent.get(url).call().map_err(|e| TransportError(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse { status, body })
    }
}

fn is_transient(status: u16) -> bool {
    status == 429 || status >= 500
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

struct Dispatcher {
    config: ProviderConfig,
    transport: Box<dyn HttpTransport>,
    clock: Box<dyn Clock>,
    limiter: Mutex<RateLimiter>,
}

enum Outcome {
    Ok(Vec<u8>),
    Exhausted,
}

impl Dispatcher {
    fn new(config: ProviderConfig, transport: Box<dyn HttpTransport>, clock: Box<dyn Clock>) -> Result<Self, ClientError> {
        config.validate()?;
        let limiter = Mutex::new(RateLimiter::new(config.max_rps));
        Ok(Self {
            config,
            transport,
            clock,
            limiter,
        })
    }

    /// POST with rate limiting and exponential backoff on transient
    /// failures. Auth failures are returned at once.
    fn post(&self, body: &str) -> Result<Outcome, ClientError> {
        let key = self.config.credential()?;
        let headers = [("Authorization", format!("Bearer {key}"))];
        let headers: Vec<(&str, &str)> = headers.iter().map(|(k, v)| (*k, v.as_str())).collect();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                let backoff = self.config.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                self.clock.sleep(Duration::from_millis(backoff));
            }
            self.limiter.lock().expect("limiter lock").acquire(self.clock.as_ref());
            match self.transport.post_json(&self.config.endpoint, &headers, body) {
                Ok(r) if (200..300).contains(&r.status) => return Ok(Outcome::Ok(r.body)),
                Ok(r) if r.status == 401 || r.status == 403 => {
                    return Err(ClientError::AuthError(format!("status {}", r.status)))
                }
                Ok(r) if is_transient(r.status) => {
                    log::warn!("transient status {} (attempt {})", r.status, attempt + 1)
                }
                Ok(r) => return Err(ClientError::MalformedResponse(format!("status {}", r.status))),
                Err(e) => log::warn!("{e} (attempt {})", attempt + 1),
            }
        }
        Ok(Outcome::Exhausted)
    }
}

#[derive(Serialize)]
struct SentimentRequest<'a> {
    documents: Vec<RequestDoc<'a>>,
}

#[derive(Serialize)]
struct RequestDoc<'a> {
    id: String,
    text: &'a str,
}

#[derive(Deserialize)]
struct SentimentResponse {
    documents: Vec<ResponseDoc>,
}

#[derive(Deserialize)]
struct ResponseDoc {
    id: String,
    scores: ResponseScores,
}

#[derive(Deserialize)]
struct ResponseScores {
    positive: f64,
    negative: f64,
    neutral: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteScores {
    pub scores: Vec<SentimentScore>,
    pub warnings: Vec<String>,
}

/// Remote sentiment scoring: cache first, misses batched to the endpoint.
pub struct RemoteSentiment {
    id: String,
    dispatcher: Dispatcher,
    cache: Option<Cache>,
}

impl RemoteSentiment {
    pub fn new(
        id: impl Into<String>,
        config: ProviderConfig,
        transport: Box<dyn HttpTransport>,
        clock: Box<dyn Clock>,
    ) -> Result<Self, ClientError> {
        let cache = config.cache_dir.as_ref().map(Cache::open).transpose()?;
        Ok(Self {
            id: id.into(),
            dispatcher: Dispatcher::new(config, transport, clock)?,
            cache,
        })
    }

    pub fn remote_sentiment(&self, texts: &[&str]) -> Result<RemoteScores, ClientError> {
        let mut scores: Vec<Option<SentimentScore>> = vec![None; texts.len()];
        let mut warnings = Vec::new();
        let mut misses = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let cached = self
                .cache
                .as_ref()
                .and_then(|c| c.get(&content_hash(t)))
                .and_then(|e| serde_json::from_str::<SentimentScore>(&e.payload).ok());
            match cached {
                Some(s) => scores[i] = Some(s),
                None => misses.push(i),
            }
        }
        let mut exhausted = Vec::new();
        for batch in misses.chunks(self.dispatcher.config.batch_size) {
            let req = SentimentRequest {
                documents: batch
                    .iter()
                    .map(|&i| RequestDoc {
                        id: i.to_string(),
                        text: texts[i],
                    })
                    .collect(),
            };
            let body = serde_json::to_string(&req).expect("request serializes");
            let bytes = match self.dispatcher.post(&body)? {
                Outcome::Ok(b) => b,
                Outcome::Exhausted => {
                    exhausted.extend_from_slice(batch);
                    continue;
                }
            };
            let resp: SentimentResponse =
                serde_json::from_slice(&bytes).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
            let by_id: HashMap<&str, &ResponseScores> =
                resp.documents.iter().map(|d| (d.id.as_str(), &d.scores)).collect();
            for &i in batch {
                let key = i.to_string();
                let s = by_id
                    .get(key.as_str())
                    .ok_or_else(|| ClientError::MalformedResponse(format!("no result for document {i}")))?;
                let (score, rescaled) = SentimentScore::renormalized(s.positive, s.negative, s.neutral)
                    .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
                if rescaled {
                    let w = format!(
                        "document {i}: scores ({}, {}, {}) renormalized",
                        s.positive, s.negative, s.neutral
                    );
                    log::warn!("{w}");
                    warnings.push(w);
                }
                if let Some(c) = &self.cache {
                    let payload = serde_json::to_string(&score).expect("score serializes");
                    c.record(&self.id, texts[i], payload, &now_rfc3339())?;
                }
                scores[i] = Some(score);
            }
        }
        if !exhausted.is_empty() {
            exhausted.sort_unstable();
            return Err(ClientError::TransientExhausted(exhausted));
        }
        Ok(RemoteScores {
            scores: scores.into_iter().map(|s| s.expect("every item scored")).collect(),
            warnings,
        })
    }
}

impl SentimentProvider for RemoteSentiment {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, texts: &[&str]) -> Vec<Result<SentimentScore, ProviderError>> {
        match self.remote_sentiment(texts) {
            Ok(r) => r.scores.into_iter().map(Ok).collect(),
            Err(ClientError::TransientExhausted(failed)) => {
                // retry the survivors individually so one bad batch does not sink the rest
                texts
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        if failed.binary_search(&i).is_err() {
                            self.remote_sentiment(&[t])
                                .map(|r| r.scores[0])
                                .map_err(|e| ProviderError::new(e.to_string()))
                        } else {
                            Err(ProviderError::new("retries exhausted"))
                        }
                    })
                    .collect()
            }
            Err(e) => texts.iter().map(|_| Err(ProviderError::new(e.to_string()))).collect(),
        }
    }
}

/// Source of OCR token layouts keyed by image reference.
pub trait OcrSource {
    fn document(&self, image_ref: &str) -> Result<OcrDocument, ClientError>;
}

#[derive(Deserialize)]
struct OcrResponse {
    width: f64,
    height: f64,
    tokens: Vec<OcrToken>,
}

/// Remote OCR: the image is fetched, sent base64-encoded, and the token
/// layout is cached under the hash of the image reference.
pub struct RemoteOcr {
    id: String,
    dispatcher: Dispatcher,
    cache: Option<Cache>,
}

impl RemoteOcr {
    pub fn new(
        id: impl Into<String>,
        config: ProviderConfig,
        transport: Box<dyn HttpTransport>,
        clock: Box<dyn Clock>,
    ) -> Result<Self, ClientError> {
        let cache = config.cache_dir.as_ref().map(Cache::open).transpose()?;
        Ok(Self {
            id: id.into(),
            dispatcher: Dispatcher::new(config, transport, clock)?,
            cache,
        })
    }

    pub fn remote_ocr(&self, image_ref: &str) -> Result<(OcrDocument, Vec<String>), ClientError> {
        let hash = content_hash(image_ref);
        if let Some(e) = self.cache.as_ref().and_then(|c| c.get(&hash)) {
            if let Ok(doc) = serde_json::from_str::<OcrDocument>(&e.payload) {
                return Ok((doc, Vec::new()));
            }
        }
        let image = match self.dispatcher.transport.get(image_ref) {
            Ok(r) if (200..300).contains(&r.status) => r.body,
            Ok(r) => return Err(ClientError::ImageUnavailable(format!("{image_ref}: status {}", r.status))),
            Err(e) => return Err(ClientError::ImageUnavailable(format!("{image_ref}: {e}"))),
        };
        let body = serde_json::json!({
            "source_id": image_ref,
            "image": base64::engine::general_purpose::STANDARD.encode(&image),
        })
        .to_string();
        let bytes = match self.dispatcher.post(&body)? {
            Outcome::Ok(b) => b,
            Outcome::Exhausted => return Err(ClientError::TransientExhausted(vec![0])),
        };
        let resp: OcrResponse =
            serde_json::from_slice(&bytes).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        let mut doc = OcrDocument {
            source_id: image_ref.to_string(),
            width: resp.width,
            height: resp.height,
            tokens: resp.tokens,
        };
        let warnings = doc.clamp_to_bounds();
        if let Some(c) = &self.cache {
            let payload = serde_json::to_string(&doc).expect("document serializes");
            c.record(&self.id, image_ref, payload, &now_rfc3339())?;
        }
        Ok((doc, warnings))
    }
}

impl OcrSource for RemoteOcr {
    fn document(&self, image_ref: &str) -> Result<OcrDocument, ClientError> {
        self.remote_ocr(image_ref).map(|(d, _)| d)
    }
}

/// Serves only from a recorded fixture directory; a miss is an error.
#[derive(Debug, Clone, Default)]
pub struct ReplayProvider {
    id: String,
    entries: BTreeMap<String, CacheEntry>,
}

impl ReplayProvider {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, ClientError> {
        let mut entries = BTreeMap::new();
        let dir = dir.as_ref();
        if dir.exists() {
            for item in fs::read_dir(dir)? {
                let path = item?.path();
                if path.extension().and_then(|e| e.to_str()) != Some("json") {
                    continue;
                }
                let text = fs::read_to_string(&path)?;
                let entry: CacheEntry = serde_json::from_str(&text)
                    .map_err(|e| ClientError::MalformedResponse(format!("{}: {e}", path.display())))?;
                entries.insert(entry.hash.clone(), entry);
            }
        }
        let id = entries
            .values()
            .next()
            .map(|e| e.provider.clone())
            .unwrap_or_else(|| "replay".to_string());
        Ok(Self { id, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn payload(&self, input: &str) -> Result<&str, ClientError> {
        let hash = content_hash(input);
        self.entries
            .get(&hash)
            .map(|e| e.payload.as_str())
            .ok_or(ClientError::FixtureMiss(hash))
    }

    pub fn sentiment(&self, text: &str) -> Result<SentimentScore, ClientError> {
        let payload = self.payload(text)?;
        serde_json::from_str(payload).map_err(|e| ClientError::MalformedResponse(e.to_string()))
    }
}

impl SentimentProvider for ReplayProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, texts: &[&str]) -> Vec<Result<SentimentScore, ProviderError>> {
        texts
            .iter()
            .map(|t| self.sentiment(t).map_err(|e| ProviderError::new(e.to_string())))
            .collect()
    }
}

impl OcrSource for ReplayProvider {
    fn document(&self, image_ref: &str) -> Result<OcrDocument, ClientError> {
        let payload = self.payload(image_ref)?;
        let mut doc: OcrDocument =
            serde_json::from_str(payload).map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
        doc.clamp_to_bounds();
        Ok(doc)
    }
}

/// Wraps a provider and records every successful score into a cache, so
/// the directory can later be replayed.
pub struct Recording<'a, P: ?Sized> {
    pub inner: &'a P,
    pub cache: Cache,
    pub stored_at: String,
}

impl<P: SentimentProvider + ?Sized> SentimentProvider for Recording<'_, P> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn score(&self, texts: &[&str]) -> Vec<Result<SentimentScore, ProviderError>> {
        let out = self.inner.score(texts);
        for (t, r) in texts.iter().zip(&out) {
            if let Ok(s) = r {
                let payload = serde_json::to_string(s).expect("score serializes");
                if let Err(e) = self.cache.record(self.inner.id(), t, payload, &self.stored_at) {
                    log::warn!("cache write failed: {e}");
                }
            }
        }
        out
    }
}

/// Directory of OCR documents stored as `<source_id>.json`.
#[derive(Debug, Clone)]
pub struct OcrFixtureDir {
    pub dir: PathBuf,
}

pub fn ocr_file_name(source_id: &str) -> String {
    let safe: String = source_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{safe}.json")
}

impl OcrSource for OcrFixtureDir {
    fn document(&self, image_ref: &str) -> Result<OcrDocument, ClientError> {
        let path = self.dir.join(ocr_file_name(image_ref));
        let text = fs::read_to_string(&path).map_err(|_| ClientError::FixtureMiss(content_hash(image_ref)))?;
        let (doc, warnings) =
            OcrDocument::from_json(&text).map_err(|e| ClientError::MalformedResponse(format!("{}: {e}", path.display())))?;
        for w in warnings {
            log::warn!("{w}");
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct Scripted {
        responses: Mutex<VecDeque<Result<HttpResponse, TransportError>>>,
        calls: Arc<AtomicUsize>,
    }

    impl Scripted {
        fn new(responses: Vec<Result<HttpResponse, TransportError>>) -> (Self, Arc<AtomicUsize>) {
            let calls = Arc::new(AtomicUsize::new(0));
            (
                Self {
                    responses: Mutex::new(responses.into()),
                    calls: calls.clone(),
                },
                calls,
            )
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(&self, _: &str, _: &[(&str, &str)], _: &str) -> Result<HttpResponse, TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.responses
                .lock()
                .unwrap()
                .pop_front()
                .unwrap_or(Err(TransportError("script exhausted".into())))
        }

        fn get(&self, url: &str) -> Result<HttpResponse, TransportError> {
            Err(TransportError(format!("unreachable {url}")))
        }
    }

    fn ok(body: &str) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            body: body.as_bytes().to_vec(),
        })
    }

    fn status(code: u16) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            body: Vec::new(),
        })
    }

    const KEY_VAR: &str = "ORBITLENS_TEST_KEY";

    fn config(dir: Option<&Path>) -> ProviderConfig {
        std::env::set_var(KEY_VAR, "secret");
        let mut c = ProviderConfig::new("http://sentiment.invalid/score", KEY_VAR);
        c.cache_dir = dir.map(Path::to_path_buf);
        c.max_retries = 2;
        c
    }

    fn remote(dir: Option<&Path>, script: Vec<Result<HttpResponse, TransportError>>) -> (RemoteSentiment, Arc<AtomicUsize>) {
        let (t, calls) = Scripted::new(script);
        let r = RemoteSentiment::new("remote", config(dir), Box::new(t), Box::new(VirtualClock::default())).unwrap();
        (r, calls)
    }

    #[test]
    fn scores_pass_through_and_renormalize() {
        let body = r#"{"documents":[{"id":"0","scores":{"positive":0.5,"negative":0.3,"neutral":0.2}},
                      {"id":"1","scores":{"positive":0.6,"negative":0.6,"neutral":0.0}}]}"#;
        let (r, _) = remote(None, vec![ok(body)]);
        let out = r.remote_sentiment(&["a", "b"]).unwrap();
        assert_eq!(out.scores[0], SentimentScore { positive: 0.5, negative: 0.3, neutral: 0.2 });
        assert_eq!(out.scores[1], SentimentScore { positive: 0.5, negative: 0.5, neutral: 0.0 });
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn cached_inputs_make_no_calls() {
        let dir = tempfile::tempdir().unwrap();
        let body = r#"{"documents":[{"id":"0","scores":{"positive":0.9,"negative":0.05,"neutral":0.05}}]}"#;
        let (r, calls) = remote(Some(dir.path()), vec![ok(body)]);
        let first = r.remote_sentiment(&["great"]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let (r2, calls2) = remote(Some(dir.path()), vec![]);
        let second = r2.remote_sentiment(&["great"]).unwrap();
        assert_eq!(calls2.load(Ordering::SeqCst), 0);
        assert_eq!(first.scores, second.scores);
    }

    #[test]
    fn auth_errors_do_not_retry() {
        let (r, calls) = remote(None, vec![status(401), status(200)]);
        assert!(matches!(r.remote_sentiment(&["x"]), Err(ClientError::AuthError(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn transient_failures_exhaust_retries() {
        let (r, calls) = remote(None, vec![status(503), status(429), status(500)]);
        assert_eq!(
            r.remote_sentiment(&["x", "y"]),
            Err(ClientError::TransientExhausted(vec![0, 1]))
        );
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn transient_then_success() {
        let body = r#"{"documents":[{"id":"0","scores":{"positive":0.2,"negative":0.2,"neutral":0.6}}]}"#;
        let (r, calls) = remote(None, vec![status(503), ok(body)]);
        assert!(r.remote_sentiment(&["x"]).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn malformed_response() {
        let (r, _) = remote(None, vec![ok(r#"{"documents":[{"id":"0","score":1}]}"#)]);
        assert!(matches!(r.remote_sentiment(&["x"]), Err(ClientError::MalformedResponse(_))));
    }

    #[test]
    fn missing_credential_is_auth_error() {
        let mut c = config(None);
        c.credential_env = "ORBITLENS_UNSET_VARIABLE".into();
        let (t, calls) = Scripted::new(vec![]);
        let r = RemoteSentiment::new("remote", c, Box::new(t), Box::new(VirtualClock::default())).unwrap();
        assert!(matches!(r.remote_sentiment(&["x"]), Err(ClientError::AuthError(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn unreachable_image() {
        let (t, _) = Scripted::new(vec![]);
        let ocr = RemoteOcr::new("ocr", config(None), Box::new(t), Box::new(VirtualClock::default())).unwrap();
        assert!(matches!(
            ocr.remote_ocr("http://images.invalid/a.png"),
            Err(ClientError::ImageUnavailable(_))
        ));
    }

    #[test]
    fn replay_hits_and_misses() {
        let dir = tempfile::tempdir().unwrap();
        let empty = ReplayProvider::open(dir.path()).unwrap();
        assert_eq!(empty.sentiment("x"), Err(ClientError::FixtureMiss(content_hash("x"))));

        let cache = Cache::open(dir.path()).unwrap();
        cache
            .record("lexicon", "good day", r#"{"positive":0.75,"negative":0.0,"neutral":0.25}"#.into(), "t")
            .unwrap();
        let replay = ReplayProvider::open(dir.path()).unwrap();
        assert_eq!(replay.id(), "lexicon");
        assert_eq!(replay.sentiment("good day").unwrap().positive, 0.75);
        assert!(matches!(replay.sentiment("bad day"), Err(ClientError::FixtureMiss(_))));
    }

    #[test]
    fn cache_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        let payload = "{\"a\": [1, 2.50, \"\\u00e9\"]}".to_string();
        let e = cache.record("p", "input", payload.clone(), "t").unwrap();
        assert_eq!(cache.get(&e.hash).unwrap().payload, payload);
        // entries are immutable
        cache.record("p", "input", "other".into(), "t2").unwrap();
        assert_eq!(cache.get(&e.hash).unwrap().payload, payload);
    }

    #[test]
    fn limiter_respects_rate_on_virtual_clock() {
        for rate in [1.0, 3.0, 2.5, 10.0] {
            let clock = VirtualClock::default();
            let mut lim = RateLimiter::new(rate);
            let times: Vec<Duration> = (0..40).map(|_| lim.acquire(&clock)).collect();
            for (i, t) in times.iter().enumerate() {
                let in_window = times[i..].iter().filter(|u| **u < *t + Duration::from_secs(1)).count();
                assert!(in_window as f64 <= rate.max(1.0), "rate {rate}: {in_window}");
            }
        }
    }
}
