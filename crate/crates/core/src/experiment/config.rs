//! Grid configuration file (TOML).
//!
//! ```toml
//! iterations = 5
//! parallelism = 4
//!
//! [[scenes]]
//! name = "perimeter"
//! query = { address = "31 Caroline St. N, Waterloo" }
//! images = "images/perimeter"      # relative to the config file
//!
//! [[models]]
//! label = "gpt-4o-mini"
//! keyword_model = "gpt-4o"
//! aggregate_model = "gpt-4o-mini"
//! caption_model = "gpt-4o-mini"
//!
//! [scoring]
//! kind = "mock"                    # mock | fixture | remote
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::grid::{ExperimentGrid, ModelConfig, SceneSpec};
use super::ExperimentError;
use crate::agent::select_caption_inputs;
use crate::http::{Secret, Transport};
use crate::maps::BuildingQuery;
use crate::scoring::{FixtureVectors, RemoteEmbedder, ScoringProviders, SpaceId};
use crate::store::{sha256_hex, stage_directory, synthetic_png, Acquisition, AssetStore, ImageAsset, ImageKind};

pub const EMBEDDINGS_API_KEY_ENV: &str = "DBA_EMBEDDINGS_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub name: String,
    pub query: BuildingQuery,
    /// Directory of staged images.
    #[serde(default)]
    pub images: Option<PathBuf>,
    /// Generate this many placeholder images instead (offline demos).
    #[serde(default)]
    pub synthetic_images: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingKind {
    #[default]
    Mock,
    Fixture,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    #[serde(default)]
    pub kind: EmbeddingKind,
    #[serde(default = "default_dim")]
    pub mock_dim: usize,
    #[serde(default = "default_scale")]
    pub pac_scale: f64,
    #[serde(default)]
    pub fixture: Option<PathBuf>,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Remote model name per space.
    #[serde(default)]
    pub models: BTreeMap<SpaceId, String>,
}

fn default_dim() -> usize {
    512
}

fn default_scale() -> f64 {
    1.0
}

fn default_parallelism() -> usize {
    4
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            kind: EmbeddingKind::Mock,
            mock_dim: default_dim(),
            pac_scale: default_scale(),
            fixture: None,
            base_url: None,
            models: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub iterations: u32,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub include_street_maps: bool,
    pub scenes: Vec<SceneConfig>,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub scoring: ScoringConfig,
}

impl GridConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for s in &cfg.scenes {
            s.query
                .validate()
                .map_err(|e| ExperimentError::Config(format!("scene {}: {e}", s.name)))?;
            if s.images.is_some() == s.synthetic_images.is_some() {
                return Err(ExperimentError::Config(format!(
                    "scene {}: set exactly one of images or synthetic_images",
                    s.name
                )));
            }
        }
        if cfg.scoring.mock_dim == 0 {
            return Err(ExperimentError::Config("scoring.mock_dim must be positive".into()));
        }
        Ok(cfg)
    }

    /// Loads a config file; also returns the hash of its bytes.
    pub fn load(path: &Path) -> Result<(Self, String), ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((Self::from_toml(&text)?, sha256_hex(text.as_bytes())))
    }

    /// Stages every scene's images into `store` and builds the grid.
    /// Relative image directories resolve against `base_dir`.
    pub fn stage(&self, base_dir: &Path, store: &AssetStore) -> Result<ExperimentGrid, ExperimentError> {
        let mut scenes = Vec::with_capacity(self.scenes.len());
        for s in &self.scenes {
            let images = match (&s.images, s.synthetic_images) {
                (Some(dir), _) => {
                    let dir = if dir.is_absolute() { dir.clone() } else { base_dir.join(dir) };
                    let staged = stage_directory(&dir, store).map_err(ExperimentError::Store)?;
                    select_caption_inputs(&staged, self.include_street_maps)
                }
                (None, Some(n)) => synthetic_scene_images(&s.name, n, store)?,
                (None, None) => Vec::new(),
            };
            if images.is_empty() {
                return Err(ExperimentError::Config(format!("scene {} has no images", s.name)));
            }
            scenes.push(SceneSpec {
                name: s.name.clone(),
                query: s.query.clone(),
                images,
            });
        }
        ExperimentGrid::new(scenes, self.iterations, self.models.clone())
    }

    pub fn scoring_providers(
        &self,
        base_dir: &Path,
        transport: Option<Arc<dyn Transport>>,
        store: Option<Arc<AssetStore>>,
    ) -> Result<ScoringProviders, ExperimentError> {
        let sc = &self.scoring;
        let mut providers = match sc.kind {
            EmbeddingKind::Mock => ScoringProviders::hash_mock(sc.mock_dim),
            EmbeddingKind::Fixture => {
                let rel = sc
                    .fixture
                    .as_ref()
                    .ok_or_else(|| ExperimentError::Config("scoring.fixture is required for kind = fixture".into()))?;
                let path = if rel.is_absolute() { rel.clone() } else { base_dir.join(rel) };
                let vectors = FixtureVectors::load(&path).map_err(|e| ExperimentError::Config(e.to_string()))?;
                ScoringProviders::fixture(Arc::new(vectors))
            }
            EmbeddingKind::Remote => {
                let transport = transport
                    .ok_or_else(|| ExperimentError::Config("remote embeddings need network access".into()))?;
                let base = sc
                    .base_url
                    .clone()
                    .ok_or_else(|| ExperimentError::Config("scoring.base_url is required for kind = remote".into()))?;
                let key = Secret::from_env(EMBEDDINGS_API_KEY_ENV);
                let make = |space: SpaceId| -> Arc<RemoteEmbedder> {
                    Arc::new(RemoteEmbedder::new(
                        space,
                        sc.models.get(&space).cloned().unwrap_or_else(|| space.as_str().to_string()),
                        transport.clone(),
                        base.clone(),
                        key.clone(),
                        store.clone(),
                    ))
                };
                ScoringProviders {
                    clip: make(SpaceId::Clip),
                    blip: make(SpaceId::Blip),
                    pac: make(SpaceId::Pac),
                    pac_scale: 1.0,
                }
            }
        };
        providers.pac_scale = sc.pac_scale;
        Ok(providers)
    }
}

/// Deterministic placeholder images for a scene.
pub fn synthetic_scene_images(scene: &str, n: usize, store: &AssetStore) -> Result<Vec<ImageAsset>, ExperimentError> {
    (0..n)
        .map(|i| {
            let object = store
                .put(&synthetic_png(64, 64, format!("{scene}/{i}").as_bytes()))
                .map_err(ExperimentError::Store)?;
            ImageAsset::new(
                &object,
                ImageKind::ObliqueOrbit,
                Acquisition::Imported {
                    file_name: format!("synthetic_{i:03}.png"),
                },
            )
            .map_err(ExperimentError::Store)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = r#"
iterations = 2

[[scenes]]
name = "a"
query = { address = "31 Caroline St. N, Waterloo" }
synthetic_images = 3

[[scenes]]
name = "b"
query = { coordinates = { lat = 43.0, lng = -80.0 } }
synthetic_images = 2

[[models]]
label = "mini"
keyword_model = "gpt-4o"
aggregate_model = "gpt-4o-mini"
caption_model = "gpt-4o-mini"
"#;

    #[test]
    fn parses_and_stages() {
        let cfg = GridConfig::from_toml(CFG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let grid = cfg.stage(dir.path(), &store).unwrap();
        assert_eq!(grid.expected_calls(), ((3 + 2) + (2 + 2)) * 2);
        assert_eq!(grid.expected_triplets(), 5 * 2);
        assert_eq!(cfg.scoring.kind, EmbeddingKind::Mock);
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = GridConfig::from_toml(&CFG.replace("iterations = 2", "iterations = 0")).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        assert!(matches!(cfg.stage(dir.path(), &store), Err(ExperimentError::InvalidGrid(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(GridConfig::from_toml(&format!("bogus = 1\n{CFG}")).is_err());
    }
}
