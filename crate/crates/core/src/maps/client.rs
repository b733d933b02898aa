use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::wire::{self, parse_elevation, parse_geocode};
use super::{excerpt, BuildingQuery, BuildingRecord, MapKind, MapsError, Provenance, StaticMapRequest};
use crate::geo::{ring_centroid, GeoPoint, ZoomLevel};
use crate::http::{HttpRequest, HttpResponse, ResponseCache, RetryPolicy, RetryingTransport, Secret, Transport};
use crate::store::{Acquisition, AssetStore, ImageAsset, ImageKind, StoreError};

pub const MAPS_API_KEY_ENV: &str = "MAPS_API_KEY";
pub const MAPS_BASE_URL_ENV: &str = "MAPS_BASE_URL";
pub const DEFAULT_MAPS_BASE_URL: &str = "https://maps.googleapis.com";

/// A parallel call that hangs off the geocoded location and enriches the
/// record (elevation, and later traffic or air quality).
pub trait SidecarFetcher: Send + Sync {
    fn name(&self) -> &str;
    fn request(&self, base_url: &str, record: &BuildingRecord) -> HttpRequest;
    fn apply(&self, body: &[u8], record: &mut BuildingRecord) -> Result<(), MapsError>;
}

pub struct ElevationFetcher;

impl SidecarFetcher for ElevationFetcher {
    fn name(&self) -> &str {
        "elevation"
    }

    fn request(&self, base_url: &str, record: &BuildingRecord) -> HttpRequest {
        wire::elevation_request(base_url, record.location)
    }

    fn apply(&self, body: &[u8], record: &mut BuildingRecord) -> Result<(), MapsError> {
        record.ground_elevation_m = Some(parse_elevation(body, record.location)?);
        Ok(())
    }
}

/// Log line for one request made while building a bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub endpoint: String,
    pub signature: String,
    pub issued_at: u64,
    pub completed_at: u64,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CallRecord {
    fn provenance(&self) -> Provenance {
        Provenance {
            endpoint: self.endpoint.clone(),
            request_id: self.signature[..16].to_string(),
            issued_at: self.issued_at,
            completed_at: self.completed_at,
            from_cache: self.from_cache,
        }
    }
}

/// Which static maps a bundle retrieval fetches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundlePlan {
    pub roadmap_zooms: Vec<ZoomLevel>,
    pub satellite_zooms: Vec<ZoomLevel>,
    pub width_px: u32,
    pub height_px: u32,
    pub overlay_footprint: bool,
}

impl BundlePlan {
    pub const DEFAULT_SIZE_PX: u32 = 640;

    /// One roadmap and one satellite image per zoom.
    pub fn per_zoom(zooms: &[ZoomLevel]) -> Self {
        BundlePlan {
            roadmap_zooms: zooms.to_vec(),
            satellite_zooms: zooms.to_vec(),
            width_px: Self::DEFAULT_SIZE_PX,
            height_px: Self::DEFAULT_SIZE_PX,
            overlay_footprint: true,
        }
    }

    pub fn satellite_only(zooms: &[ZoomLevel]) -> Self {
        BundlePlan {
            roadmap_zooms: Vec::new(),
            ..BundlePlan::per_zoom(zooms)
        }
    }

    /// Satellite images at zooms 18 and 19: geocode, elevation and two
    /// static maps, four requests in total.
    pub fn experiment_default() -> Self {
        let zooms = [ZoomLevel::new(18).expect("valid zoom"), ZoomLevel::new(19).expect("valid zoom")];
        BundlePlan::satellite_only(&zooms)
    }

    pub fn static_map_count(&self) -> usize {
        self.roadmap_zooms.len() + self.satellite_zooms.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildingBundle {
    pub record: BuildingRecord,
    pub assets: Vec<ImageAsset>,
    pub calls: Vec<CallRecord>,
}

impl BuildingBundle {
    pub fn failed_calls(&self) -> impl Iterator<Item = &CallRecord> {
        self.calls.iter().filter(|c| c.error.is_some())
    }

    pub fn is_complete(&self) -> bool {
        self.failed_calls().next().is_none()
    }
}

pub struct MapsClientBuilder {
    transport: Arc<dyn Transport>,
    store: Arc<AssetStore>,
    base_url: String,
    api_key: Option<Secret>,
    cache: Option<Arc<ResponseCache>>,
    retry: RetryPolicy,
    max_in_flight: usize,
    fetchers: Vec<Arc<dyn SidecarFetcher>>,
}

impl MapsClientBuilder {
    pub fn base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into();
        self
    }

    pub fn api_key(mut self, key: Option<Secret>) -> Self {
        self.api_key = key;
        self
    }

    pub fn cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn retry(mut self, policy: RetryPolicy) -> Self {
        self.retry = policy;
        self
    }

    pub fn max_in_flight(mut self, n: usize) -> Self {
        self.max_in_flight = n;
        self
    }

    /// Registers a sidecar fetcher, replacing any with the same name.
    pub fn fetcher(mut self, fetcher: Arc<dyn SidecarFetcher>) -> Self {
        self.fetchers.retain(|f| f.name() != fetcher.name());
        self.fetchers.push(fetcher);
        self
    }

    pub fn without_fetchers(mut self) -> Self {
        self.fetchers.clear();
        self
    }

    pub fn build(self) -> MapsClient {
        MapsClient {
            transport: RetryingTransport::new(self.transport, self.retry, self.max_in_flight),
            base_url: self.base_url,
            api_key: self.api_key,
            cache: self.cache,
            store: self.store,
            fetchers: self.fetchers,
            clock: AtomicU64::new(0),
        }
    }
}

/// Client for the map service. Shareable across threads.
pub struct MapsClient {
    transport: RetryingTransport<Arc<dyn Transport>>,
    base_url: String,
    api_key: Option<Secret>,
    cache: Option<Arc<ResponseCache>>,
    store: Arc<AssetStore>,
    fetchers: Vec<Arc<dyn SidecarFetcher>>,
    clock: AtomicU64,
}

impl MapsClient {
    pub fn builder(transport: Arc<dyn Transport>, store: Arc<AssetStore>) -> MapsClientBuilder {
        MapsClientBuilder {
            transport,
            store,
            base_url: DEFAULT_MAPS_BASE_URL.to_string(),
            api_key: None,
            cache: None,
            retry: RetryPolicy::default(),
            max_in_flight: 8,
            fetchers: vec![Arc::new(ElevationFetcher)],
        }
    }

    /// Live client configured from `MAPS_API_KEY` and `MAPS_BASE_URL`.
    pub fn live_from_env(transport: Arc<dyn Transport>, store: Arc<AssetStore>) -> Result<MapsClientBuilder, MapsError> {
        let key = Secret::from_env(MAPS_API_KEY_ENV)
            .ok_or_else(|| MapsError::Config(format!("{MAPS_API_KEY_ENV} is not set")))?;
        let base = std::env::var(MAPS_BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_MAPS_BASE_URL.to_string());
        Ok(MapsClient::builder(transport, store).api_key(Some(key)).base_url(base))
    }

    pub fn store(&self) -> &Arc<AssetStore> {
        &self.store
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn execute(&self, endpoint: &str, request: HttpRequest) -> (Result<HttpResponse, MapsError>, CallRecord) {
        let request = request.secret_param("key", self.api_key.as_ref());
        let signature = request.signature();
        let issued_at = self.tick();
        let cached = self.cache.as_ref().and_then(|c| c.get(&signature));
        let from_cache = cached.is_some();
        let result = match cached {
            Some(resp) => Ok(resp),
            None => self.transport.send(&request).map_err(MapsError::from).and_then(|resp| {
                if resp.is_success() {
                    if let Some(c) = &self.cache {
                        c.put(&signature, &resp);
                    }
                    Ok(resp)
                } else {
                    Err(MapsError::Http {
                        endpoint: endpoint.to_string(),
                        status: resp.status,
                        excerpt: excerpt(&resp.body),
                    })
                }
            }),
        };
        let record = CallRecord {
            endpoint: endpoint.to_string(),
            signature,
            issued_at,
            completed_at: self.tick(),
            from_cache,
            error: result.as_ref().err().map(|e| e.to_string()),
        };
        (result, record)
    }

    pub fn geocode(&self, query: &BuildingQuery) -> Result<BuildingRecord, MapsError> {
        self.geocode_logged(query).map(|(r, _)| r)
    }

    fn geocode_logged(&self, query: &BuildingQuery) -> Result<(BuildingRecord, CallRecord), MapsError> {
        query.validate()?;
        let (resp, call) = self.execute("geocode", wire::geocode_request(&self.base_url, query));
        let mut record = parse_geocode(&resp?.body, query)?;
        record.provenance.push(call.provenance());
        Ok((record, call))
    }

    pub fn elevation(&self, point: GeoPoint) -> Result<f64, MapsError> {
        let (resp, _) = self.execute("elevation", wire::elevation_request(&self.base_url, point));
        parse_elevation(&resp?.body, point)
    }

    pub fn static_map(&self, request: &StaticMapRequest) -> Result<ImageAsset, MapsError> {
        self.static_map_logged(request).0
    }

    fn static_map_logged(&self, request: &StaticMapRequest) -> (Result<ImageAsset, MapsError>, CallRecord) {
        let endpoint = format!("staticmap:{}:z{}", request.map_kind.as_str(), request.zoom);
        let (resp, mut call) = self.execute(&endpoint, wire::static_map_request(&self.base_url, request));
        let result = resp.and_then(|resp| {
            let object = self.store.put(&resp.body).map_err(|e| match e {
                StoreError::NotAnImage(reason) => MapsError::Parse {
                    endpoint: endpoint.clone(),
                    reason,
                    excerpt: excerpt(&resp.body),
                },
                other => MapsError::Store(other),
            })?;
            let kind = match request.map_kind {
                MapKind::Satellite => ImageKind::Satellite,
                MapKind::Roadmap => ImageKind::StreetMap,
            };
            Ok(ImageAsset::new(&object, kind, Acquisition::Map(request.clone()))?)
        });
        if let Err(e) = &result {
            call.error.get_or_insert_with(|| e.to_string());
        }
        (result, call)
    }

    /// Geocodes, then runs every sidecar fetcher and static-map call in
    /// parallel. A geocode failure aborts; later failures are recorded in
    /// the bundle's call log and the rest of the bundle is still returned.
    pub fn retrieve_building_bundle(&self, query: &BuildingQuery, plan: &BundlePlan) -> Result<BuildingBundle, MapsError> {
        let (mut record, geocode_call) = self.geocode_logged(query)?;

        let center = record
            .footprint
            .as_ref()
            .map(|ring| ring_centroid(ring).point)
            .unwrap_or(record.location);
        let kinds = plan
            .roadmap_zooms
            .iter()
            .map(|z| (MapKind::Roadmap, *z))
            .chain(plan.satellite_zooms.iter().map(|z| (MapKind::Satellite, *z)));
        let mut map_requests = Vec::with_capacity(plan.static_map_count());
        for (kind, zoom) in kinds {
            let mut req = StaticMapRequest::new(center, zoom, kind, plan.width_px, plan.height_px)?;
            if plan.overlay_footprint {
                if let Some(ring) = &record.footprint {
                    req = req.with_overlay(ring.clone());
                }
            }
            map_requests.push(req);
        }

        let snapshot = record.clone();
        let (sidecars, maps) = std::thread::scope(|scope| {
            let sidecar_handles: Vec<_> = self
                .fetchers
                .iter()
                .map(|f| {
                    let req = f.request(&self.base_url, &snapshot);
                    scope.spawn(move || self.execute(f.name(), req))
                })
                .collect();
            let map_handles: Vec<_> = map_requests
                .iter()
                .map(|r| scope.spawn(move || self.static_map_logged(r)))
                .collect();
            let sidecars: Vec<_> = sidecar_handles
                .into_iter()
                .map(|h| h.join().expect("sidecar thread panicked"))
                .collect();
            let maps: Vec<_> = map_handles
                .into_iter()
                .map(|h| h.join().expect("static map thread panicked"))
                .collect();
            (sidecars, maps)
        });

        let mut calls = vec![geocode_call];
        for (fetcher, (resp, mut call)) in self.fetchers.iter().zip(sidecars) {
            match resp.and_then(|r| fetcher.apply(&r.body, &mut record)) {
                Ok(()) => record.provenance.push(call.provenance()),
                Err(e) => {
                    log::warn!("{} failed: {e}", fetcher.name());
                    call.error.get_or_insert_with(|| e.to_string());
                }
            }
            calls.push(call);
        }
        let mut assets = Vec::new();
        for (asset, call) in maps {
            if let Ok(a) = asset {
                assets.push(a);
            }
            calls.push(call);
        }
        Ok(BuildingBundle { record, assets, calls })
    }
}
