//! Record/replay of HTTP interactions.
//!
//! A cassette is a JSON document of recorded exchanges keyed by request
//! signature. Replay never falls back to the network: a request whose
//! signature was not recorded fails with [`TransportError::ReplayMiss`].

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::http::{CanonicalRequest, HttpRequest, HttpResponse, Transport, TransportError};

pub const CASSETTE_VERSION: u32 = 1;

/// Response bodies are stored as text when they are valid UTF-8, base64 otherwise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordedBody {
    Text(String),
    Base64(String),
}

impl RecordedBody {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        match std::str::from_utf8(bytes) {
            Ok(s) => RecordedBody::Text(s.to_string()),
            Err(_) => RecordedBody::Base64(base64::engine::general_purpose::STANDARD.encode(bytes)),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TransportError> {
        match self {
            RecordedBody::Text(s) => Ok(s.as_bytes().to_vec()),
            RecordedBody::Base64(b) => base64::engine::general_purpose::STANDARD
                .decode(b)
                .map_err(|e| TransportError::Cassette(format!("bad base64 body: {e}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub signature: String,
    pub request: CanonicalRequest,
    pub status: u16,
    #[serde(default)]
    pub content_type: Option<String>,
    pub body: RecordedBody,
    pub recorded_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cassette {
    pub version: u32,
    pub entries: Vec<CassetteEntry>,
}

impl Default for Cassette {
    fn default() -> Self {
        Cassette {
            version: CASSETTE_VERSION,
            entries: Vec::new(),
        }
    }
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, TransportError> {
        let raw = std::fs::read(path).map_err(|e| {
            TransportError::Cassette(format!("cannot read cassette {}: {e}", path.display()))
        })?;
        let cassette: Cassette = serde_json::from_slice(&raw).map_err(|e| {
            TransportError::Cassette(format!("cannot parse cassette {}: {e}", path.display()))
        })?;
        if cassette.version != CASSETTE_VERSION {
            return Err(TransportError::Cassette(format!(
                "unsupported cassette version {}",
                cassette.version
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &cassette.entries {
            if e.signature != e.request.signature() {
                return Err(TransportError::Cassette(format!(
                    "entry for {} has a stale signature",
                    e.request.path
                )));
            }
            if !seen.insert(e.signature.as_str()) {
                return Err(TransportError::Cassette(format!(
                    "duplicate signature {}",
                    e.signature
                )));
            }
        }
        Ok(cassette)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut bytes = serde_json::to_vec_pretty(self).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes)
    }

    /// Inserts or replaces the entry with the same signature.
    pub fn upsert(&mut self, entry: CassetteEntry) {
        match self.entries.iter_mut().find(|e| e.signature == entry.signature) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }
}

/// Passes requests through to a live transport and records each exchange.
pub struct RecordingTransport<T> {
    inner: T,
    cassette: Mutex<Cassette>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            cassette: Mutex::new(Cassette::default()),
        }
    }

    pub fn cassette(&self) -> Cassette {
        self.cassette.lock().expect("cassette lock").clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        self.cassette().save(path)
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.send(request)?;
        let canonical = request.canonical();
        let entry = CassetteEntry {
            signature: canonical.signature(),
            request: canonical,
            status: response.status,
            content_type: response.content_type.clone(),
            body: RecordedBody::from_bytes(&response.body),
            recorded_at: Utc::now(),
        };
        self.cassette.lock().expect("cassette lock").upsert(entry);
        Ok(response)
    }
}

/// Serves responses from a cassette, keyed by signature.
pub struct ReplayTransport {
    entries: BTreeMap<String, CassetteEntry>,
    served: AtomicUsize,
}

impl ReplayTransport {
    pub fn new(cassette: Cassette) -> Self {
        ReplayTransport {
            entries: cassette
                .entries
                .into_iter()
                .map(|e| (e.signature.clone(), e))
                .collect(),
            served: AtomicUsize::new(0),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, TransportError> {
        Ok(ReplayTransport::new(Cassette::load(path)?))
    }

    /// Number of requests answered from the cassette.
    pub fn served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    fn nearest(&self, canonical: &CanonicalRequest) -> String {
        let wanted = canonical.text();
        self.entries
            .values()
            .map(|e| (strsim::levenshtein(&wanted, &e.request.text()), e))
            .min_by_key(|(d, _)| *d)
            .map(|(_, e)| format!("{} ({})", e.signature, e.request.text()))
            .unwrap_or_else(|| "<empty cassette>".to_string())
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let canonical = request.canonical();
        let signature = canonical.signature();
        match self.entries.get(&signature) {
            Some(e) => {
                self.served.fetch_add(1, Ordering::SeqCst);
                Ok(HttpResponse {
                    status: e.status,
                    content_type: e.content_type.clone(),
                    body: e.body.to_bytes()?,
                })
            }
            None => Err(TransportError::ReplayMiss {
                nearest: self.nearest(&canonical),
                path: canonical.path,
                signature,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::FnTransport;

    fn request(addr: &str) -> HttpRequest {
        HttpRequest::get("https://maps.test", "/maps/api/geocode/json").param("address", addr)
    }

    #[test]
    fn record_then_replay_is_identical() {
        let live = FnTransport::new(|r: &HttpRequest| {
            Ok(HttpResponse::ok("application/json", format!("{{\"q\":\"{}\"}}", r.params["address"])))
        });
        let rec = RecordingTransport::new(live);
        let first = rec.send(&request("a")).unwrap();
        rec.send(&request("b")).unwrap();
        rec.send(&request("a")).unwrap();
        let cassette = rec.cassette();
        assert_eq!(cassette.entries.len(), 2);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        cassette.save(&path).unwrap();
        let replay = ReplayTransport::from_file(&path).unwrap();
        assert_eq!(replay.send(&request("a")).unwrap(), first);
        assert_eq!(replay.served(), 1);
    }

    #[test]
    fn replay_miss_names_nearest() {
        let mut cassette = Cassette::default();
        let c = request("31 Caroline St").canonical();
        cassette.upsert(CassetteEntry {
            signature: c.signature(),
            request: c,
            status: 200,
            content_type: None,
            body: RecordedBody::Text("{}".into()),
            recorded_at: Utc::now(),
        });
        let replay = ReplayTransport::new(cassette);
        match replay.send(&request("32 Caroline St")).unwrap_err() {
            TransportError::ReplayMiss { nearest, .. } => assert!(nearest.contains("31%20Caroline")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn binary_bodies_round_trip() {
        let bytes = vec![0x89, b'P', b'N', b'G', 0xff, 0x00];
        let body = RecordedBody::from_bytes(&bytes);
        assert!(matches!(body, RecordedBody::Base64(_)));
        assert_eq!(body.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn missing_cassette_file_is_an_error() {
        let err = ReplayTransport::from_file(Path::new("/nonexistent/c.json")).err().unwrap();
        assert!(matches!(err, TransportError::Cassette(_)));
    }
}
