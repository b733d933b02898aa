//! No-reference caption scoring by cosine similarity of co-embedded caption
//! text and image features.
//!
//! Encoders are external: vectors come from a remote endpoint, a fixture
//! file of precomputed vectors, or a deterministic hash mock.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Mutex};

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::http::{HttpRequest, Secret, Transport, TransportError};
use crate::store::{sha256_hex, AssetStore, ImageAsset};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("embedding spaces differ: {0} vs {1}")]
    SpaceMismatch(SpaceId, SpaceId),
    #[error("embedding lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine undefined for an all-zero vector")]
    ZeroVector,
    #[error("invalid embedding: {0}")]
    InvalidVector(String),
    #[error("PAC scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("no {space} embedding stored under key {key}")]
    Lookup { space: SpaceId, key: String },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("embedding endpoint returned HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("cannot parse embedding response: {0}")]
    Parse(String),
    #[error("fixture file {path}: {reason}")]
    Fixture { path: String, reason: String },
    #[error("asset {0}: {1}")]
    Asset(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceId {
    Clip,
    Blip,
    Pac,
}

impl SpaceId {
    pub const ALL: [SpaceId; 3] = [SpaceId::Clip, SpaceId::Blip, SpaceId::Pac];

    pub fn as_str(self) -> &'static str {
        match self {
            SpaceId::Clip => "clip",
            SpaceId::Blip => "blip",
            SpaceId::Pac => "pac",
        }
    }
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A finite, non-empty embedding tagged with its space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    space: SpaceId,
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(space: SpaceId, values: Vec<f64>) -> Result<Self, ScoringError> {
        if values.is_empty() {
            return Err(ScoringError::InvalidVector("empty vector".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ScoringError::InvalidVector(format!("non-finite value at index {i}")));
        }
        Ok(EmbeddingVector { space, values })
    }

    pub fn space(&self) -> SpaceId {
        self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Neumaier-compensated sum of `a[k] * b[k]`.
fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let term = x * y;
        let t = sum + term;
        if sum.abs() >= term.abs() {
            c += (sum - t) + term;
        } else {
            c += (term - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// `100 * (t . i) / (|t| |i|)`, in [-100, 100].
pub fn similarity_score(t: &EmbeddingVector, i: &EmbeddingVector) -> Result<f64, ScoringError> {
    if t.space != i.space {
        return Err(ScoringError::SpaceMismatch(t.space, i.space));
    }
    if t.len() != i.len() {
        return Err(ScoringError::DimensionMismatch(t.len(), i.len()));
    }
    // Rescale by the largest magnitude so squared norms cannot overflow or
    // underflow; cosine is scale invariant.
    let scale = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let (st, si) = (scale(&t.values), scale(&i.values));
    if st == 0.0 || si == 0.0 {
        return Err(ScoringError::ZeroVector);
    }
    let tv: Vec<f64> = t.values.iter().map(|x| x / st).collect();
    let iv: Vec<f64> = i.values.iter().map(|x| x / si).collect();
    let dot = compensated_dot(&tv, &iv);
    let tt = compensated_dot(&tv, &tv);
    let ii = compensated_dot(&iv, &iv);
    let cos = dot / (tt * ii).sqrt();
    Ok((100.0 * cos).clamp(-100.0, 100.0))
}

/// Truncated, rescaled similarity: `max(0, similarity) * scale`.
pub fn pac_score(t: &EmbeddingVector, i: &EmbeddingVector, scale: f64) -> Result<f64, ScoringError> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ScoringError::InvalidScale(scale));
    }
    Ok(similarity_score(t, i)?.max(0.0) * scale)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbedInput<'a> {
    Text(&'a str),
    /// An image by asset id.
    Asset(&'a str),
}

impl EmbedInput<'_> {
    /// Content key: `text:<sha256 of the text>` or the asset id itself.
    pub fn key(&self) -> String {
        match self {
            EmbedInput::Text(t) => text_key(t),
            EmbedInput::Asset(id) => id.to_string(),
        }
    }
}

pub fn text_key(text: &str) -> String {
    format!("text:{}", sha256_hex(text.as_bytes()))
}

/// Same input, same vector, for the lifetime of one provider instance.
pub trait EmbeddingProvider: Send + Sync {
    fn space(&self) -> SpaceId;
    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ScoringError>;
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Arc<T> {
    fn space(&self) -> SpaceId {
        (**self).space()
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ScoringError> {
        (**self).embed(input)
    }
}

/// Deterministic unit-norm vectors: a shared direction for the space plus
/// per-input noise, so unrelated inputs still score around `affinity * 100`.
#[derive(Debug, Clone)]
pub struct HashMockEmbedder {
    space: SpaceId,
    dim: usize,
    affinity: f64,
    common: Vec<f64>,
}

impl HashMockEmbedder {
    pub fn new(space: SpaceId, dim: usize) -> Self {
        let affinity = match space {
            SpaceId::Clip => 0.30,
            SpaceId::Blip => 0.42,
            SpaceId::Pac => 0.35,
        };
        Self::with_affinity(space, dim, affinity)
    }

    /// `affinity` in [0, 1] is the expected cosine between unrelated inputs.
    pub fn with_affinity(space: SpaceId, dim: usize, affinity: f64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let mut rng = ChaCha20Rng::from_seed(seed_for(&["common", space.as_str()]));
        let common = unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        HashMockEmbedder {
            space,
            dim,
            affinity: affinity.clamp(0.0, 1.0),
            common,
        }
    }
}

fn seed_for(parts: &[&str]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().into()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl EmbeddingProvider for HashMockEmbedder {
    fn space(&self) -> SpaceId {
        self.space
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ScoringError> {
        let (kind, body) = match input {
            EmbedInput::Text(t) => ("text", t),
            EmbedInput::Asset(a) => ("asset", a),
        };
        let mut rng = ChaCha20Rng::from_seed(seed_for(&[self.space.as_str(), kind, body]));
        let noise = unit((0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let (a, b) = (self.affinity.sqrt(), (1.0 - self.affinity).sqrt());
        let v = self.common.iter().zip(&noise).map(|(c, n)| a * c + b * n).collect();
        EmbeddingVector::new(self.space, unit(v))
    }
}

/// On-disk layout of a fixture file: `key -> space -> vector`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureVectors {
    pub entries: BTreeMap<String, BTreeMap<SpaceId, Vec<f64>>>,
}

impl FixtureVectors {
    pub fn load(path: &Path) -> Result<Self, ScoringError> {
        let fail = |reason: String| ScoringError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let parsed: FixtureVectors = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let mut dims: BTreeMap<SpaceId, usize> = BTreeMap::new();
        for (key, spaces) in &parsed.entries {
            for (space, v) in spaces {
                EmbeddingVector::new(*space, v.clone()).map_err(|e| fail(format!("{key}/{space}: {e}")))?;
                let d = *dims.entry(*space).or_insert(v.len());
                if d != v.len() {
                    return Err(fail(format!("{key}/{space}: length {} but the space uses {d}", v.len())));
                }
            }
        }
        Ok(parsed)
    }

    pub fn embedder(self: &Arc<Self>, space: SpaceId) -> FixtureEmbedder {
        FixtureEmbedder {
            space,
            vectors: self.clone(),
        }
    }
}

/// Serves precomputed vectors; a missing key is an error naming the key.
#[derive(Debug, Clone)]
pub struct FixtureEmbedder {
    space: SpaceId,
    vectors: Arc<FixtureVectors>,
}

impl EmbeddingProvider for FixtureEmbedder {
    fn space(&self) -> SpaceId {
        self.space
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ScoringError> {
        let key = input.key();
        let values = self
            .vectors
            .entries
            .get(&key)
            .and_then(|spaces| spaces.get(&self.space))
            .ok_or_else(|| ScoringError::Lookup {
                space: self.space,
                key: key.clone(),
            })?;
        EmbeddingVector::new(self.space, values.clone())
    }
}

/// Embedding endpoint client. Request body:
/// `{"model": m, "input": [{"type": "text", "text": ..} | {"type": "image", "image_base64": ..}]}`;
/// response: `{"data": [{"embedding": [..]}]}`.
pub struct RemoteEmbedder {
    space: SpaceId,
    model: String,
    transport: Arc<dyn Transport>,
    base_url: String,
    api_key: Option<Secret>,
    store: Option<Arc<AssetStore>>,
    cache: Mutex<HashMap<String, EmbeddingVector>>,
}

impl RemoteEmbedder {
    pub fn new(
        space: SpaceId,
        model: impl Into<String>,
        transport: Arc<dyn Transport>,
        base_url: impl Into<String>,
        api_key: Option<Secret>,
        store: Option<Arc<AssetStore>>,
    ) -> Self {
        RemoteEmbedder {
            space,
            model: model.into(),
            transport,
            base_url: base_url.into(),
            api_key,
            store,
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn request_body(&self, input: EmbedInput<'_>) -> Result<Vec<u8>, ScoringError> {
        let item = match input {
            EmbedInput::Text(t) => json!({"type": "text", "text": t}),
            EmbedInput::Asset(id) => {
                let store = self
                    .store
                    .as_ref()
                    .ok_or_else(|| ScoringError::Asset(id.to_string(), "no asset store configured".into()))?;
                let bytes = store.read(id).map_err(|e| ScoringError::Asset(id.to_string(), e.to_string()))?;
                json!({"type": "image", "image_base64": base64::engine::general_purpose::STANDARD.encode(bytes)})
            }
        };
        Ok(serde_json::to_vec(&json!({"model": self.model, "input": [item]})).expect("json value"))
    }
}

#[derive(Deserialize)]
struct WireEmbeddings {
    data: Vec<WireEmbedding>,
}

#[derive(Deserialize)]
struct WireEmbedding {
    embedding: Vec<f64>,
}

impl EmbeddingProvider for RemoteEmbedder {
    fn space(&self) -> SpaceId {
        self.space
    }

    fn embed(&self, input: EmbedInput<'_>) -> Result<EmbeddingVector, ScoringError> {
        let key = input.key();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let request = HttpRequest::post_json(&self.base_url, "/embeddings", self.request_body(input)?).secret_header(
            "authorization",
            self.api_key.as_ref().map(|k| Secret::new(format!("Bearer {}", k.expose()))),
        );
        let response = self.transport.send(&request)?;
        if !response.is_success() {
            return Err(ScoringError::Http {
                status: response.status,
                excerpt: crate::maps::excerpt(&response.body),
            });
        }
        let parsed: WireEmbeddings =
            serde_json::from_slice(&response.body).map_err(|e| ScoringError::Parse(e.to_string()))?;
        let first = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| ScoringError::Parse("response holds no embeddings".into()))?;
        let v = EmbeddingVector::new(self.space, first.embedding)?;
        self.cache.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }
}

/// One embedding provider per space, plus the PAC rescale factor.
#[derive(Clone)]
pub struct ScoringProviders {
    pub clip: Arc<dyn EmbeddingProvider>,
    pub blip: Arc<dyn EmbeddingProvider>,
    pub pac: Arc<dyn EmbeddingProvider>,
    pub pac_scale: f64,
}

impl ScoringProviders {
    pub fn hash_mock(dim: usize) -> Self {
        ScoringProviders {
            clip: Arc::new(HashMockEmbedder::new(SpaceId::Clip, dim)),
            blip: Arc::new(HashMockEmbedder::new(SpaceId::Blip, dim)),
            pac: Arc::new(HashMockEmbedder::new(SpaceId::Pac, dim)),
            pac_scale: 1.0,
        }
    }

    pub fn fixture(vectors: Arc<FixtureVectors>) -> Self {
        ScoringProviders {
            clip: Arc::new(vectors.embedder(SpaceId::Clip)),
            blip: Arc::new(vectors.embedder(SpaceId::Blip)),
            pac: Arc::new(vectors.embedder(SpaceId::Pac)),
            pac_scale: 1.0,
        }
    }

    fn check(&self) -> Result<(), ScoringError> {
        for (want, p) in [(SpaceId::Clip, &self.clip), (SpaceId::Blip, &self.blip), (SpaceId::Pac, &self.pac)] {
            if p.space() != want {
                return Err(ScoringError::SpaceMismatch(want, p.space()));
            }
        }
        if !(self.pac_scale.is_finite() && self.pac_scale > 0.0) {
            return Err(ScoringError::InvalidScale(self.pac_scale));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriplet {
    pub caption_id: String,
    pub asset_id: String,
    pub clip_pct: f64,
    pub blip_pct: f64,
    pub pac_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreFailure {
    pub asset_id: String,
    pub error: String,
}

/// Scores for one caption. `triplets.len() + failures.len()` equals the
/// number of images scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptionScores {
    pub triplets: Vec<ScoreTriplet>,
    pub failures: Vec<ScoreFailure>,
}

/// Short stable id of a caption text.
pub fn caption_id(text: &str) -> String {
    sha256_hex(text.as_bytes())[..16].to_string()
}

/// Scores `caption` against every image. The caption is embedded once per
/// space; an image whose embedding fails is reported and skipped.
pub fn score_caption(
    caption: &str,
    images: &[ImageAsset],
    providers: &ScoringProviders,
) -> Result<CaptionScores, ScoringError> {
    providers.check()?;
    let mut out = CaptionScores::default();
    if images.is_empty() {
        return Ok(out);
    }
    let t_clip = providers.clip.embed(EmbedInput::Text(caption))?;
    let t_blip = providers.blip.embed(EmbedInput::Text(caption))?;
    let t_pac = providers.pac.embed(EmbedInput::Text(caption))?;
    let cid = caption_id(caption);
    for image in images {
        let id = image.asset_id.as_str();
        let scored = (|| -> Result<ScoreTriplet, ScoringError> {
            Ok(ScoreTriplet {
                caption_id: cid.clone(),
                asset_id: id.to_string(),
                clip_pct: similarity_score(&t_clip, &providers.clip.embed(EmbedInput::Asset(id))?)?,
                blip_pct: similarity_score(&t_blip, &providers.blip.embed(EmbedInput::Asset(id))?)?,
                pac_pct: pac_score(&t_pac, &providers.pac.embed(EmbedInput::Asset(id))?, providers.pac_scale)?,
            })
        })();
        match scored {
            Ok(t) => out.triplets.push(t),
            Err(e) => out.failures.push(ScoreFailure {
                asset_id: id.to_string(),
                error: e.to_string(),
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(SpaceId::Clip, values.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_cosine() {
        let s = similarity_score(&v(&[1.0, 2.0, 2.0]), &v(&[2.0, 1.0, 2.0])).unwrap();
        assert!((s - 800.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn self_and_orthogonal() {
        let a = v(&[0.3, -1.7, 4.0]);
        assert!((similarity_score(&a, &a).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(similarity_score(&v(&[1.0, 0.0]), &v(&[0.0, 3.0])).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(similarity_score(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(ScoringError::ZeroVector)));
        assert!(matches!(
            similarity_score(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(ScoringError::DimensionMismatch(1, 2))
        ));
        let blip = EmbeddingVector::new(SpaceId::Blip, vec![1.0]).unwrap();
        assert!(matches!(similarity_score(&v(&[1.0]), &blip), Err(ScoringError::SpaceMismatch(..))));
        assert!(EmbeddingVector::new(SpaceId::Clip, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pac_truncates_and_rescales() {
        // cosine -0.2
        let t = v(&[1.0, 0.0]);
        let i = v(&[-0.2, (1.0f64 - 0.04).sqrt()]);
        assert_eq!(pac_score(&t, &i, 1.0).unwrap(), 0.0);
        // cosine 0.5, scale 2
        let i = v(&[0.5, 0.75f64.sqrt()]);
        assert!((pac_score(&t, &i, 2.0).unwrap() - 100.0).abs() < 1e-9);
        assert!(pac_score(&t, &i, 0.0).is_err());
    }

    #[test]
    fn hash_mock_is_deterministic_and_unit() {
        let m = HashMockEmbedder::new(SpaceId::Clip, 64);
        let a = m.embed(EmbedInput::Text("a glass tower")).unwrap();
        assert_eq!(a, m.embed(EmbedInput::Text("a glass tower")).unwrap());
        let n: f64 = a.values().iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_miss_names_key() {
        let vectors = Arc::new(FixtureVectors::default());
        let err = vectors.embedder(SpaceId::Clip).embed(EmbedInput::Asset("abc")).unwrap_err();
        assert!(err.to_string().contains("abc"));
    }
}
