//! Map-service integration: geocoding, elevation and static maps, plus the
//! bundle retrieval that chains them.
//!
//! Geocoding always runs first. Everything else (elevation, any registered
//! sidecar fetcher, every static-map image) depends only on the geocoded
//! location and runs in parallel once it is known.

mod client;
pub mod mock;
mod wire;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoError, GeoPoint, PolygonRing, ZoomLevel};
use crate::http::TransportError;
use crate::store::StoreError;

pub use client::{
    BuildingBundle, BundlePlan, CallRecord, ElevationFetcher, MapsClient, MapsClientBuilder, SidecarFetcher,
    DEFAULT_MAPS_BASE_URL, MAPS_API_KEY_ENV, MAPS_BASE_URL_ENV,
};
pub use wire::{elevation_request, geocode_request, static_map_request};

#[derive(Debug, Error)]
pub enum MapsError {
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("HTTP {status} from {endpoint}: {excerpt}")]
    Http {
        endpoint: String,
        status: u16,
        excerpt: String,
    },
    #[error("no results for {query}")]
    NotFound { query: String },
    #[error("{endpoint} returned status {status}: {message}")]
    ApiStatus {
        endpoint: String,
        status: String,
        message: String,
    },
    #[error("cannot parse {endpoint} response: {reason} (body starts: {excerpt})")]
    Parse {
        endpoint: String,
        reason: String,
        excerpt: String,
    },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub(crate) fn excerpt(body: &[u8]) -> String {
    let text = String::from_utf8_lossy(body);
    let mut s: String = text.chars().take(160).collect();
    if text.chars().count() > 160 {
        s.push('…');
    }
    s
}

/// Exactly one way of identifying a building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingQuery {
    Address(String),
    PlaceName(String),
    PostalCode(String),
    Coordinates(GeoPoint),
}

impl BuildingQuery {
    pub fn address(text: &str) -> Result<Self, MapsError> {
        Ok(BuildingQuery::Address(non_empty(text, "address")?))
    }

    pub fn place_name(text: &str) -> Result<Self, MapsError> {
        Ok(BuildingQuery::PlaceName(non_empty(text, "place name")?))
    }

    pub fn postal_code(text: &str) -> Result<Self, MapsError> {
        Ok(BuildingQuery::PostalCode(non_empty(text, "postal code")?))
    }

    pub fn coordinates(lat: f64, lng: f64) -> Result<Self, MapsError> {
        Ok(BuildingQuery::Coordinates(GeoPoint::new(lat, lng)?))
    }

    /// Re-checks the invariants, for values that arrived through serde.
    pub fn validate(&self) -> Result<(), MapsError> {
        match self {
            BuildingQuery::Address(t) | BuildingQuery::PlaceName(t) | BuildingQuery::PostalCode(t) => {
                non_empty(t, "query").map(|_| ())
            }
            BuildingQuery::Coordinates(_) => Ok(()),
        }
    }
}

fn non_empty(text: &str, what: &str) -> Result<String, MapsError> {
    let t = text.trim();
    if t.is_empty() {
        Err(MapsError::InvalidQuery(format!("{what} is empty")))
    } else {
        Ok(t.to_string())
    }
}

impl fmt::Display for BuildingQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildingQuery::Address(t) => write!(f, "address {t:?}"),
            BuildingQuery::PlaceName(t) => write!(f, "place {t:?}"),
            BuildingQuery::PostalCode(t) => write!(f, "postal code {t:?}"),
            BuildingQuery::Coordinates(p) => write!(f, "coordinates {p}"),
        }
    }
}

/// One request that contributed to a record, with logical-clock timestamps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub endpoint: String,
    pub request_id: String,
    pub issued_at: u64,
    pub completed_at: u64,
    pub from_cache: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingRecord {
    pub formatted_address: String,
    pub location: GeoPoint,
    pub entrances: Vec<GeoPoint>,
    pub footprint: Option<PolygonRing>,
    pub ground_elevation_m: Option<f64>,
    pub place_id: String,
    pub provenance: Vec<Provenance>,
    /// Response fields outside the parsed subset and sidecar outputs, as raw JSON text.
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Roadmap,
    Satellite,
}

impl MapKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MapKind::Roadmap => "roadmap",
            MapKind::Satellite => "satellite",
        }
    }
}

pub const MAX_STATIC_MAP_PX: u32 = 2048;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticMapRequest {
    pub center: GeoPoint,
    pub zoom: ZoomLevel,
    pub map_kind: MapKind,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlay: Option<PolygonRing>,
}

impl StaticMapRequest {
    pub fn new(
        center: GeoPoint,
        zoom: ZoomLevel,
        map_kind: MapKind,
        width_px: u32,
        height_px: u32,
    ) -> Result<Self, MapsError> {
        let ok = |v: u32| (1..=MAX_STATIC_MAP_PX).contains(&v);
        if !ok(width_px) || !ok(height_px) {
            return Err(MapsError::InvalidQuery(format!(
                "static map size {width_px}x{height_px} outside 1..={MAX_STATIC_MAP_PX}"
            )));
        }
        Ok(StaticMapRequest {
            center,
            zoom,
            map_kind,
            width_px,
            height_px,
            overlay: None,
        })
    }

    pub fn with_overlay(mut self, ring: PolygonRing) -> Self {
        self.overlay = Some(ring);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_text_is_trimmed_and_required() {
        assert_eq!(
            BuildingQuery::address("  31 Caroline St. N ").unwrap(),
            BuildingQuery::Address("31 Caroline St. N".into())
        );
        assert!(BuildingQuery::postal_code("   ").is_err());
        assert!(BuildingQuery::coordinates(91.0, 0.0).is_err());
    }

    #[test]
    fn query_serde_is_one_key() {
        let q = BuildingQuery::PostalCode("N2L 2Y5".into());
        assert_eq!(serde_json::to_string(&q).unwrap(), r#"{"postal_code":"N2L 2Y5"}"#);
        let q: BuildingQuery = serde_json::from_str(r#"{"coordinates":{"lat":1.0,"lng":2.0}}"#).unwrap();
        assert!(matches!(q, BuildingQuery::Coordinates(_)));
    }

    #[test]
    fn static_map_size_bounds() {
        let c = GeoPoint::new(0.0, 0.0).unwrap();
        let z = ZoomLevel::new(18).unwrap();
        assert!(StaticMapRequest::new(c, z, MapKind::Satellite, 640, 640).is_ok());
        assert!(StaticMapRequest::new(c, z, MapKind::Satellite, 0, 640).is_err());
        assert!(StaticMapRequest::new(c, z, MapKind::Satellite, 640, 2049).is_err());
    }
}
