//! Regenerates the frozen fixtures under `fixtures/`. Run on purpose only:
//! `cargo test -p dba-core --test fixture_gen -- --ignored`.

use std::path::PathBuf;
use std::sync::Arc;

use dba_core::cassette::RecordingTransport;
use dba_core::http::{FnTransport, HttpRequest, HttpResponse, RetryPolicy, Secret};
use dba_core::maps::{BundlePlan, MapsClient};
use dba_core::orbit::{export_orbit_document, generate_orbit};
use dba_core::store::synthetic_png;
use dba_core::{AssetStore, BuildingQuery, GeoPoint, OrbitSpec};

const FAKE_KEY: &str = "fixture-generation-key-0000";

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn body(name: &str) -> Vec<u8> {
    std::fs::read(fixtures().join("bodies").join(name)).unwrap()
}

fn answer(req: &HttpRequest, geocode_body: &[u8]) -> HttpResponse {
    match req.path.as_str() {
        "/maps/api/geocode/json" => HttpResponse::ok("application/json; charset=UTF-8", geocode_body.to_vec()),
        "/maps/api/elevation/json" => HttpResponse::ok("application/json; charset=UTF-8", body("perimeter_elevation.json")),
        "/maps/api/staticmap" => {
            let zoom = req.params.get("zoom").cloned().unwrap_or_default();
            HttpResponse::ok("image/png", synthetic_png(640, 640, format!("perimeter-satellite-z{zoom}").as_bytes()))
        }
        other => panic!("unexpected path {other}"),
    }
}

fn record(query: &BuildingQuery, geocode_body: Vec<u8>, plan: &BundlePlan, out: &str) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(AssetStore::open(dir.path()).unwrap());
    let recorder = Arc::new(RecordingTransport::new(FnTransport::new(move |r: &HttpRequest| {
        Ok(answer(r, &geocode_body))
    })));
    let client = MapsClient::builder(recorder.clone(), store)
        .api_key(Some(Secret::new(FAKE_KEY)))
        .retry(RetryPolicy::immediate(1))
        .build();
    let _ = client.retrieve_building_bundle(query, plan);
    let path = fixtures().join("cassettes").join(out);
    recorder.save(&path).unwrap();
    assert!(!std::fs::read_to_string(&path).unwrap().contains(FAKE_KEY));
}

#[test]
#[ignore]
fn regenerate_fixtures() {
    record(
        &BuildingQuery::address("31 Caroline St. N, Waterloo").unwrap(),
        body("perimeter_geocode.json"),
        &BundlePlan::experiment_default(),
        "perimeter_bundle.json",
    );
    record(
        &BuildingQuery::address("1 Nowhere Lane, Atlantis").unwrap(),
        body("zero_results_geocode.json"),
        &BundlePlan::experiment_default(),
        "zero_results.json",
    );

    let target = GeoPoint::new(43.4643, -80.5204).unwrap();
    let poses = generate_orbit(&OrbitSpec::new(target, 31, 250.0, 120.0)).unwrap();
    let dir = fixtures().join("orbits");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("perimeter_31.orbit.json"), export_orbit_document(&poses).unwrap()).unwrap();
}
