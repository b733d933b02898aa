//! Request construction and response parsing for the map service's JSON
//! geocoding and elevation endpoints and its static-map image endpoint.

use std::collections::BTreeMap;

use serde::Deserialize;

use super::{excerpt, BuildingQuery, BuildingRecord, MapsError, StaticMapRequest};
use crate::geo::{GeoPoint, PolygonRing};
use crate::http::HttpRequest;

pub const GEOCODE_PATH: &str = "/maps/api/geocode/json";
pub const ELEVATION_PATH: &str = "/maps/api/elevation/json";
pub const STATIC_MAP_PATH: &str = "/maps/api/staticmap";

fn latlng(p: GeoPoint) -> String {
    format!("{},{}", p.lat(), p.lng())
}

/// Geocoding request for any query variant; coordinates use reverse geocoding.
pub fn geocode_request(base_url: &str, query: &BuildingQuery) -> HttpRequest {
    let req = HttpRequest::get(base_url, GEOCODE_PATH).param("extra_computations", "BUILDING_AND_ENTRANCES");
    match query {
        BuildingQuery::Address(t) | BuildingQuery::PlaceName(t) => req.param("address", t.as_str()),
        BuildingQuery::PostalCode(t) => req.param("components", format!("postal_code:{t}")),
        BuildingQuery::Coordinates(p) => req.param("latlng", latlng(*p)),
    }
}

pub fn elevation_request(base_url: &str, point: GeoPoint) -> HttpRequest {
    HttpRequest::get(base_url, ELEVATION_PATH).param("locations", latlng(point))
}

pub fn static_map_request(base_url: &str, req: &StaticMapRequest) -> HttpRequest {
    let mut http = HttpRequest::get(base_url, STATIC_MAP_PATH)
        .param("center", latlng(req.center))
        .param("zoom", req.zoom.to_string())
        .param("size", format!("{}x{}", req.width_px, req.height_px))
        .param("maptype", req.map_kind.as_str());
    if let Some(ring) = &req.overlay {
        let mut path = String::from("color:0xff0000ff|weight:2|fillcolor:0xff000033");
        for v in ring.vertices() {
            path.push('|');
            path.push_str(&latlng(*v));
        }
        http = http.param("path", path);
    }
    http
}

#[derive(Deserialize)]
struct LatLng {
    lat: f64,
    lng: f64,
}

#[derive(Deserialize)]
struct Geometry {
    location: LatLng,
}

#[derive(Deserialize)]
struct Entrance {
    location: LatLng,
}

#[derive(Deserialize)]
struct DisplayPolygon {
    #[serde(rename = "type")]
    kind: String,
    coordinates: serde_json::Value,
}

#[derive(Deserialize)]
struct BuildingOutline {
    display_polygon: DisplayPolygon,
}

#[derive(Deserialize)]
struct Building {
    #[serde(default)]
    building_outlines: Vec<BuildingOutline>,
}

#[derive(Deserialize)]
struct GeocodeResult {
    formatted_address: String,
    geometry: Geometry,
    #[serde(default)]
    place_id: String,
    #[serde(default)]
    entrances: Vec<Entrance>,
    #[serde(default)]
    buildings: Vec<Building>,
    #[serde(flatten)]
    other: BTreeMap<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct Envelope<T> {
    status: String,
    #[serde(default = "Vec::new")]
    results: Vec<T>,
    #[serde(default)]
    error_message: Option<String>,
}

fn parse_err(endpoint: &str, reason: impl ToString, body: &[u8]) -> MapsError {
    MapsError::Parse {
        endpoint: endpoint.to_string(),
        reason: reason.to_string(),
        excerpt: excerpt(body),
    }
}

fn envelope<'a, T: Deserialize<'a>>(endpoint: &str, body: &'a [u8], query: &str) -> Result<Vec<T>, MapsError> {
    let env: Envelope<T> = serde_json::from_slice(body).map_err(|e| parse_err(endpoint, e, body))?;
    match env.status.as_str() {
        "OK" if !env.results.is_empty() => Ok(env.results),
        "OK" | "ZERO_RESULTS" => Err(MapsError::NotFound {
            query: query.to_string(),
        }),
        other => Err(MapsError::ApiStatus {
            endpoint: endpoint.to_string(),
            status: other.to_string(),
            message: env.error_message.unwrap_or_default(),
        }),
    }
}

fn point(endpoint: &str, ll: &LatLng, body: &[u8]) -> Result<GeoPoint, MapsError> {
    GeoPoint::new(ll.lat, ll.lng).map_err(|e| parse_err(endpoint, e, body))
}

/// The outer ring of the first GeoJSON polygon outline, as `[lng, lat]` pairs.
fn footprint(buildings: &[Building], body: &[u8]) -> Result<Option<PolygonRing>, MapsError> {
    let Some(outline) = buildings.iter().flat_map(|b| b.building_outlines.iter()).next() else {
        return Ok(None);
    };
    let poly = &outline.display_polygon;
    let outer = match poly.kind.as_str() {
        "Polygon" => poly.coordinates.get(0),
        "MultiPolygon" => poly.coordinates.get(0).and_then(|p| p.get(0)),
        other => return Err(parse_err("geocode", format!("unsupported outline type {other}"), body)),
    };
    let pairs: Vec<[f64; 2]> = outer
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| parse_err("geocode", e, body))?
        .ok_or_else(|| parse_err("geocode", "outline has no ring", body))?;
    let vertices = pairs
        .iter()
        .map(|[lng, lat]| GeoPoint::new(*lat, *lng))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| parse_err("geocode", e, body))?;
    PolygonRing::new(vertices)
        .map(Some)
        .map_err(|e| parse_err("geocode", e, body))
}

/// Parses the first geocoding result. Provenance is left empty.
pub(crate) fn parse_geocode(body: &[u8], query: &BuildingQuery) -> Result<BuildingRecord, MapsError> {
    let results: Vec<GeocodeResult> = envelope("geocode", body, &query.to_string())?;
    let first = results.into_iter().next().expect("envelope guarantees a result");
    let location = point("geocode", &first.geometry.location, body)?;
    let entrances = first
        .entrances
        .iter()
        .map(|e| point("geocode", &e.location, body))
        .collect::<Result<Vec<_>, _>>()?;
    let footprint = footprint(&first.buildings, body)?;
    let extras = first
        .other
        .into_iter()
        .map(|(k, v)| (k, v.to_string()))
        .collect();
    Ok(BuildingRecord {
        formatted_address: first.formatted_address,
        location,
        entrances,
        footprint,
        ground_elevation_m: None,
        place_id: first.place_id,
        provenance: Vec::new(),
        extras,
    })
}

#[derive(Deserialize)]
struct ElevationResult {
    elevation: f64,
}

pub(crate) fn parse_elevation(body: &[u8], point: GeoPoint) -> Result<f64, MapsError> {
    let results: Vec<ElevationResult> = envelope("elevation", body, &point.to_string())?;
    let e = results[0].elevation;
    if !e.is_finite() {
        return Err(parse_err("elevation", "non-finite elevation", body));
    }
    Ok(e)
}
