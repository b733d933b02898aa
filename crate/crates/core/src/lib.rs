//! Building analysis pipeline.
//!
//! From a building identifier this crate geocodes the building, fetches
//! elevation and static map imagery, plans an orbital camera path for
//! oblique renders, runs a multi-agent LLM keyword/caption workflow over the
//! images, scores the caption against every image with cosine-similarity
//! metrics and rolls everything up into reproducible experiment reports.

pub mod agent;
pub mod cassette;
pub mod experiment;
pub mod geo;
pub mod http;
pub mod maps;
pub mod orbit;
pub mod scoring;
pub mod store;

pub use agent::{Caption, ChatMessage, Conversation, KeywordSet, PriceTable, TokenLedger};
pub use experiment::{BoxStats, ExperimentGrid, RunManifest};
pub use geo::{GeoPoint, PolygonRing, WorldPixel, ZoomLevel};
pub use maps::{BuildingQuery, BuildingRecord, StaticMapRequest};
pub use orbit::{CameraPose, OrbitSpec};
pub use scoring::{EmbeddingVector, ScoreTriplet};
pub use store::{AssetStore, ImageAsset, ImageKind};
