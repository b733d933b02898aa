//! Transport layer shared by the map client, the chat providers and the
//! remote embedder.
//!
//! Requests are described by an [`HttpRequest`] whose canonical form excludes
//! every secret (API keys, bearer tokens). Signatures are computed over the
//! canonical form, so cassettes and caches never contain credentials.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("connection to {url} failed: {reason}")]
    Connect { url: String, reason: String },
    #[error("HTTP {status} from {url}")]
    Status { status: u16, url: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<TransportError> },
    #[error("no recorded response for {path} (signature {signature}); nearest recorded: {nearest}")]
    ReplayMiss {
        signature: String,
        path: String,
        nearest: String,
    },
    #[error("cassette error: {0}")]
    Cassette(String),
}

impl TransportError {
    fn is_retryable(&self) -> bool {
        match self {
            TransportError::Timeout { .. } | TransportError::Connect { .. } => true,
            TransportError::Status { status, .. } => is_retryable_status(*status),
            _ => false,
        }
    }
}

pub fn is_retryable_status(status: u16) -> bool {
    status == 429 || (500..=599).contains(&status)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Get => "GET",
            Method::Post => "POST",
        })
    }
}

/// A secret value whose `Debug` output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Secret(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    /// Reads a secret from the environment; empty values count as unset.
    pub fn from_env(var: &str) -> Option<Self> {
        std::env::var(var)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .map(Secret)
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(***)")
    }
}

/// One outbound request. `base_url` and the secret fields are not part of the
/// canonical form.
#[derive(Debug, Clone)]
pub struct HttpRequest {
    pub method: Method,
    pub base_url: String,
    pub path: String,
    pub params: BTreeMap<String, String>,
    pub headers: BTreeMap<String, String>,
    pub body: Option<Vec<u8>>,
    pub secret_params: Vec<(String, Secret)>,
    pub secret_headers: Vec<(String, Secret)>,
}

impl HttpRequest {
    pub fn get(base_url: impl Into<String>, path: impl Into<String>) -> Self {
        HttpRequest {
            method: Method::Get,
            base_url: base_url.into(),
            path: path.into(),
            params: BTreeMap::new(),
            headers: BTreeMap::new(),
            body: None,
            secret_params: Vec::new(),
            secret_headers: Vec::new(),
        }
    }

    pub fn post_json(base_url: impl Into<String>, path: impl Into<String>, body: Vec<u8>) -> Self {
        let mut req = HttpRequest::get(base_url, path);
        req.method = Method::Post;
        req.headers
            .insert("content-type".into(), "application/json".into());
        req.body = Some(body);
        req
    }

    /// Adds a query parameter; keys are lowercased.
    pub fn param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_ascii_lowercase(), value.into());
        self
    }

    pub fn secret_param(mut self, key: &str, value: Option<&Secret>) -> Self {
        if let Some(v) = value {
            self.secret_params.push((key.to_string(), v.clone()));
        }
        self
    }

    pub fn secret_header(mut self, key: &str, value: Option<Secret>) -> Self {
        if let Some(v) = value {
            self.secret_headers.push((key.to_string(), v));
        }
        self
    }

    pub fn canonical(&self) -> CanonicalRequest {
        CanonicalRequest {
            method: self.method,
            path: self.path.clone(),
            params: self.params.clone(),
            body_sha256: self.body.as_deref().map(|b| hex::encode(Sha256::digest(b))),
        }
    }

    pub fn signature(&self) -> String {
        self.canonical().signature()
    }

    /// The key-free URL: base, path and sorted, percent-encoded parameters.
    pub fn canonical_url(&self) -> String {
        let mut url = format!("{}{}", self.base_url.trim_end_matches('/'), self.path);
        let query = encode_query(self.params.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        if !query.is_empty() {
            url.push('?');
            url.push_str(&query);
        }
        url
    }

    /// The URL actually sent on the wire, secrets included.
    pub(crate) fn wire_url(&self) -> String {
        let mut pairs: Vec<(&str, &str)> = self
            .params
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        pairs.extend(self.secret_params.iter().map(|(k, v)| (k.as_str(), v.expose())));
        let mut url = format!("{}{}", self.base_url.trim_end_matches('/'), self.path);
        let query = encode_query(pairs.into_iter());
        if !query.is_empty() {
            url.push('?');
            url.push_str(&query);
        }
        url
    }
}

/// Percent-encodes everything outside the RFC 3986 unreserved set, except
/// `,` `:` and `|`, which the map service documents as literal separators.
fn encode_component(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' | b',' | b':' | b'|' => {
                out.push(b as char)
            }
            b' ' => out.push_str("%20"),
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn encode_query<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    pairs
        .map(|(k, v)| format!("{}={}", encode_component(k), encode_component(v)))
        .collect::<Vec<_>>()
        .join("&")
}

/// The secret-free identity of a request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalRequest {
    pub method: Method,
    pub path: String,
    pub params: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_sha256: Option<String>,
}

impl CanonicalRequest {
    pub fn text(&self) -> String {
        let query = encode_query(self.params.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        let mut s = format!("{} {}?{}", self.method, self.path, query);
        if let Some(h) = &self.body_sha256 {
            s.push_str(" body=");
            s.push_str(h);
        }
        s
    }

    pub fn signature(&self) -> String {
        hex::encode(Sha256::digest(self.text().as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub content_type: Option<String>,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn ok(content_type: &str, body: impl Into<Vec<u8>>) -> Self {
        HttpResponse {
            status: 200,
            content_type: Some(content_type.to_string()),
            body: body.into(),
        }
    }

    pub fn json(body: &serde_json::Value) -> Self {
        HttpResponse::ok("application/json", serde_json::to_vec(body).expect("json value"))
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

/// Something that can carry one request to a server and bring back the reply.
/// Non-2xx statuses are returned as responses, not errors.
pub trait Transport: Send + Sync {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

/// Live HTTPS transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        UreqTransport::new(Duration::from_secs(60))
    }
}

impl Transport for UreqTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let url = request.wire_url();
        let mut req = self.agent.request(&request.method.to_string(), &url);
        for (k, v) in &request.headers {
            req = req.set(k, v);
        }
        for (k, v) in &request.secret_headers {
            req = req.set(k, v.expose());
        }
        let result = match &request.body {
            Some(body) => req.send_bytes(body),
            None => req.call(),
        };
        let redacted = request.canonical_url();
        let response = match result {
            Ok(r) => r,
            Err(ureq::Error::Status(_, r)) => r,
            Err(ureq::Error::Transport(t)) => {
                let reason = t.to_string();
                return Err(if reason.to_ascii_lowercase().contains("timed out") {
                    TransportError::Timeout { url: redacted }
                } else {
                    TransportError::Connect {
                        url: redacted,
                        reason: t.kind().to_string(),
                    }
                });
            }
        };
        let status = response.status();
        let content_type = Some(response.content_type().to_string());
        let mut body = Vec::new();
        response
            .into_reader()
            .read_to_end(&mut body)
            .map_err(|e| TransportError::Connect {
                url: redacted,
                reason: e.to_string(),
            })?;
        Ok(HttpResponse {
            status,
            content_type,
            body,
        })
    }
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 250,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// A policy that never sleeps; for tests and mocks.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            jitter: false,
        }
    }

    pub fn delay_for(&self, retry_index: u32) -> Duration {
        let full = self.base_delay_ms.saturating_mul(1u64 << retry_index.min(16));
        let ms = if self.jitter && full > 0 {
            rand::thread_rng().gen_range(full / 2..=full)
        } else {
            full
        };
        Duration::from_millis(ms)
    }
}

/// Caps the number of requests in flight at once.
pub struct InflightLimiter {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InflightPermit<'a> {
    limiter: &'a InflightLimiter,
}

impl InflightLimiter {
    pub fn new(max: usize) -> Self {
        InflightLimiter {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InflightPermit<'_> {
        let mut n = self.current.lock().expect("limiter lock");
        while *n >= self.max {
            n = self.freed.wait(n).expect("limiter lock");
        }
        *n += 1;
        InflightPermit { limiter: self }
    }
}

impl Drop for InflightPermit<'_> {
    fn drop(&mut self) {
        let mut n = self.limiter.current.lock().expect("limiter lock");
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

/// Wraps a transport with retries, an in-flight bound and request counting.
pub struct RetryingTransport<T> {
    inner: T,
    policy: RetryPolicy,
    limiter: InflightLimiter,
    attempts: AtomicU64,
}

impl<T: Transport> RetryingTransport<T> {
    pub fn new(inner: T, policy: RetryPolicy, max_in_flight: usize) -> Self {
        RetryingTransport {
            inner,
            policy,
            limiter: InflightLimiter::new(max_in_flight),
            attempts: AtomicU64::new(0),
        }
    }

    /// Number of attempts handed to the inner transport so far.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> Transport for RetryingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let attempts = self.policy.max_attempts.max(1);
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.policy.delay_for(attempt - 1);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            let outcome = {
                let _permit = self.limiter.acquire();
                self.attempts.fetch_add(1, Ordering::SeqCst);
                self.inner.send(request)
            };
            let err = match outcome {
                Ok(resp) if is_retryable_status(resp.status) => TransportError::Status {
                    status: resp.status,
                    url: request.canonical_url(),
                },
                Ok(resp) => return Ok(resp),
                Err(e) => e,
            };
            if !err.is_retryable() {
                return Err(err);
            }
            log::debug!("attempt {} of {} failed: {err}", attempt + 1, attempts);
            last = Some(err);
        }
        Err(TransportError::Exhausted {
            attempts,
            last: Box::new(last.expect("at least one attempt")),
        })
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).send(request)
    }
}

#[derive(Serialize, Deserialize)]
struct CachedBody {
    status: u16,
    content_type: Option<String>,
    body_base64: String,
}

/// Successful responses keyed by request signature, in memory and
/// optionally mirrored to `<dir>/<signature>.json`.
pub struct ResponseCache {
    dir: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, HttpResponse>>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        ResponseCache {
            dir: None,
            entries: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache {
            dir: Some(dir),
            entries: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn get(&self, signature: &str) -> Option<HttpResponse> {
        if let Some(hit) = self.entries.lock().expect("cache lock").get(signature) {
            return Some(hit.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{signature}.json"));
        let raw = std::fs::read(path).ok()?;
        let cached: CachedBody = serde_json::from_slice(&raw).ok()?;
        let body = base64::engine::general_purpose::STANDARD
            .decode(cached.body_base64)
            .ok()?;
        let resp = HttpResponse {
            status: cached.status,
            content_type: cached.content_type,
            body,
        };
        self.entries
            .lock()
            .expect("cache lock")
            .insert(signature.to_string(), resp.clone());
        Some(resp)
    }

    pub fn put(&self, signature: &str, response: &HttpResponse) {
        if !response.is_success() {
            return;
        }
        if let Some(dir) = &self.dir {
            let cached = CachedBody {
                status: response.status,
                content_type: response.content_type.clone(),
                body_base64: base64::engine::general_purpose::STANDARD.encode(&response.body),
            };
            let path = dir.join(format!("{signature}.json"));
            let tmp = dir.join(format!(".{signature}.tmp"));
            let written = serde_json::to_vec(&cached)
                .map_err(std::io::Error::other)
                .and_then(|bytes| std::fs::write(&tmp, bytes))
                .and_then(|_| std::fs::rename(&tmp, &path));
            if let Err(e) = written {
                log::warn!("could not persist cache entry {signature}: {e}");
            }
        }
        self.entries
            .lock()
            .expect("cache lock")
            .insert(signature.to_string(), response.clone());
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Scripted transport for tests: answers from a closure and records every
/// request it sees.
pub struct FnTransport<F> {
    handler: F,
    log: Mutex<Vec<CanonicalRequest>>,
}

impl<F> FnTransport<F>
where
    F: Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    pub fn new(handler: F) -> Self {
        FnTransport {
            handler,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<CanonicalRequest> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn count(&self) -> usize {
        self.log.lock().expect("log lock").len()
    }
}

impl<F> Transport for FnTransport<F>
where
    F: Fn(&HttpRequest) -> Result<HttpResponse, TransportError> + Send + Sync,
{
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().expect("log lock").push(request.canonical());
        (self.handler)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn req() -> HttpRequest {
        HttpRequest::get("https://example.test", "/maps/api/elevation/json")
            .param("Locations", "43.4643,-80.5204")
            .secret_param("key", Some(&Secret::new("SECRET")))
    }

    #[test]
    fn signature_ignores_secrets_and_base_url() {
        let a = req();
        let mut b = req();
        b.base_url = "http://127.0.0.1:9".into();
        b.secret_params.clear();
        assert_eq!(a.signature(), b.signature());
        assert!(!a.canonical().text().contains("SECRET"));
        assert!(!a.canonical_url().contains("SECRET"));
        assert!(a.wire_url().contains("key=SECRET"));
    }

    #[test]
    fn param_keys_are_lowercased_and_sorted() {
        let r = HttpRequest::get("https://h", "/p").param("Zoom", "18").param("center", "1,2");
        assert_eq!(r.canonical_url(), "https://h/p?center=1,2&zoom=18");
    }

    #[test]
    fn secret_debug_is_redacted() {
        assert_eq!(format!("{:?}", Secret::new("abc")), "Secret(***)");
        assert!(!format!("{:?}", req()).contains("SECRET"));
    }

    #[test]
    fn retries_exactly_max_attempts_on_timeout() {
        let inner = FnTransport::new(|r: &HttpRequest| {
            Err(TransportError::Timeout {
                url: r.canonical_url(),
            })
        });
        let t = RetryingTransport::new(inner, RetryPolicy::immediate(3), 4);
        let err = t.send(&req()).unwrap_err();
        assert!(matches!(err, TransportError::Exhausted { attempts: 3, .. }));
        assert_eq!(t.inner().count(), 3);
    }

    #[test]
    fn retryable_status_then_success() {
        let calls = Arc::new(AtomicU64::new(0));
        let c = calls.clone();
        let inner = FnTransport::new(move |_r: &HttpRequest| {
            if c.fetch_add(1, Ordering::SeqCst) == 0 {
                Ok(HttpResponse {
                    status: 503,
                    content_type: None,
                    body: vec![],
                })
            } else {
                Ok(HttpResponse::ok("text/plain", "ok"))
            }
        });
        let t = RetryingTransport::new(inner, RetryPolicy::immediate(3), 4);
        assert_eq!(t.send(&req()).unwrap().body, b"ok");
        assert_eq!(t.attempts(), 2);
    }

    #[test]
    fn non_retryable_status_is_returned_once() {
        let inner = FnTransport::new(|_r: &HttpRequest| {
            Ok(HttpResponse {
                status: 403,
                content_type: None,
                body: b"denied".to_vec(),
            })
        });
        let t = RetryingTransport::new(inner, RetryPolicy::immediate(3), 4);
        assert_eq!(t.send(&req()).unwrap().status, 403);
        assert_eq!(t.attempts(), 1);
    }

    #[test]
    fn backoff_grows_exponentially() {
        let p = RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 250,
            jitter: false,
        };
        assert_eq!(p.delay_for(0), Duration::from_millis(250));
        assert_eq!(p.delay_for(1), Duration::from_millis(500));
        let jittered = RetryPolicy { jitter: true, ..p };
        let d = jittered.delay_for(1);
        assert!(d >= Duration::from_millis(250) && d <= Duration::from_millis(500));
    }

    #[test]
    fn disk_cache_survives_reload() {
        let dir = tempfile::tempdir().unwrap();
        let resp = HttpResponse::ok("image/png", vec![1, 2, 3]);
        ResponseCache::on_disk(dir.path()).unwrap().put("abc", &resp);
        let reloaded = ResponseCache::on_disk(dir.path()).unwrap();
        assert_eq!(reloaded.get("abc"), Some(resp));
        assert_eq!(reloaded.get("missing"), None);
    }
}
