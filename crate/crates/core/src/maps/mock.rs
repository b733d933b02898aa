//! Deterministic stand-in for the map service, used by `--mock` runs and tests.

use std::sync::Mutex;

use serde_json::json;
use sha2::{Digest, Sha256};

use super::wire::{ELEVATION_PATH, GEOCODE_PATH, STATIC_MAP_PATH};
use crate::http::{CanonicalRequest, HttpRequest, HttpResponse, Transport, TransportError};
use crate::store::synthetic_png;

#[derive(Default)]
pub struct MockMapsService {
    log: Mutex<Vec<CanonicalRequest>>,
}

fn unit(seed: &str, salt: u8) -> f64 {
    let d = Sha256::digest([seed.as_bytes(), &[salt]].concat());
    u32::from_be_bytes([d[0], d[1], d[2], d[3]]) as f64 / u32::MAX as f64
}

fn parse_latlng(s: &str) -> Option<(f64, f64)> {
    let (a, b) = s.split_once(',')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

impl MockMapsService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn requests(&self) -> Vec<CanonicalRequest> {
        self.log.lock().expect("log lock").clone()
    }

    fn geocode(&self, req: &HttpRequest) -> HttpResponse {
        let (lat, lng, address) = match req.params.get("latlng").and_then(|s| parse_latlng(s)) {
            Some((lat, lng)) => (lat, lng, format!("Mock building at {lat},{lng}")),
            None => {
                let text = req
                    .params
                    .get("address")
                    .or_else(|| req.params.get("components"))
                    .cloned()
                    .unwrap_or_default();
                let lat = 40.0 + 10.0 * unit(&text, 0);
                let lng = -80.0 + 10.0 * unit(&text, 1);
                let lat = (lat * 1e6).round() / 1e6;
                let lng = (lng * 1e6).round() / 1e6;
                (lat, lng, text)
            }
        };
        let d = 0.0004;
        let ring = json!([
            [lng - d, lat - d],
            [lng + d, lat - d],
            [lng + d, lat + d],
            [lng - d, lat + d],
            [lng - d, lat - d]
        ]);
        let place_id = format!("mock-{}", &hex::encode(Sha256::digest(address.as_bytes()))[..16]);
        HttpResponse::json(&json!({
            "status": "OK",
            "results": [{
                "formatted_address": address,
                "geometry": { "location": { "lat": lat, "lng": lng }, "location_type": "ROOFTOP" },
                "place_id": place_id,
                "entrances": [{ "location": { "lat": lat - d, "lng": lng }, "building_place_id": place_id }],
                "buildings": [{
                    "place_id": place_id,
                    "building_outlines": [{ "display_polygon": { "type": "Polygon", "coordinates": [ring] } }]
                }]
            }]
        }))
    }

    fn elevation(&self, req: &HttpRequest) -> HttpResponse {
        let loc = req.params.get("locations").cloned().unwrap_or_default();
        let elevation = (100.0 + 400.0 * unit(&loc, 2)) * 100.0;
        HttpResponse::json(&json!({
            "status": "OK",
            "results": [{ "elevation": elevation.round() / 100.0, "resolution": 4.77 }]
        }))
    }

    fn static_map(&self, req: &HttpRequest) -> HttpResponse {
        let (w, h) = req
            .params
            .get("size")
            .and_then(|s| s.split_once('x'))
            .and_then(|(w, h)| Some((w.parse().ok()?, h.parse().ok()?)))
            .unwrap_or((640, 640));
        let png = synthetic_png(w, h, req.canonical().text().as_bytes());
        HttpResponse::ok("image/png", png)
    }
}

impl Transport for MockMapsService {
    fn send(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        self.log.lock().expect("log lock").push(request.canonical());
        Ok(match request.path.as_str() {
            GEOCODE_PATH => self.geocode(request),
            ELEVATION_PATH => self.elevation(request),
            STATIC_MAP_PATH => self.static_map(request),
            _ => HttpResponse {
                status: 404,
                content_type: Some("text/plain".into()),
                body: b"not found".to_vec(),
            },
        })
    }
}
