//! Coordinate types and spherical geospatial math.
//!
//! Everything here is a pure function over immutable values. The projection
//! is spherical Web Mercator on a `256 * 2^z` pixel world; geodesics use a
//! spherical earth of mean radius [`MEAN_EARTH_RADIUS_M`].

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Equatorial radius used by Web Mercator.
pub const WEB_MERCATOR_RADIUS_M: f64 = 6_378_137.0;
/// Mean earth radius used for great-circle computations.
pub const MEAN_EARTH_RADIUS_M: f64 = 6_371_008.8;
/// Latitude band in which the Mercator projection is accepted.
pub const MERCATOR_MAX_LAT: f64 = 85.05113;
/// Edge length of one tile in pixels.
pub const TILE_SIZE: f64 = 256.0;
pub const MAX_ZOOM: u8 = 22;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeoError {
    #[error("latitude {0} is outside [-90, 90]")]
    LatitudeOutOfRange(f64),
    #[error("latitude {lat} is outside the Mercator band of +/-{bound} degrees")]
    OutsideMercatorBand { lat: f64, bound: f64 },
    #[error("coordinate is not finite")]
    NonFinite,
    #[error("zoom level {0} is outside [0, {MAX_ZOOM}]")]
    ZoomOutOfRange(i64),
    #[error("pixel ({x}, {y}) is outside the {size} px world at zoom {zoom}")]
    PixelOutOfRange { x: f64, y: f64, size: f64, zoom: u8 },
    #[error("distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("polygon ring needs at least 3 distinct vertices, got {0}")]
    TooFewVertices(usize),
}

/// A point in decimal degrees. Longitude is normalized into `[-180, 180)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPoint", into = "RawPoint")]
pub struct GeoPoint {
    lat: f64,
    lng: f64,
}

#[derive(Serialize, Deserialize)]
struct RawPoint {
    lat: f64,
    lng: f64,
}

impl TryFrom<RawPoint> for GeoPoint {
    type Error = GeoError;

    fn try_from(raw: RawPoint) -> Result<Self, Self::Error> {
        GeoPoint::new(raw.lat, raw.lng)
    }
}

impl From<GeoPoint> for RawPoint {
    fn from(p: GeoPoint) -> Self {
        RawPoint { lat: p.lat, lng: p.lng }
    }
}

impl GeoPoint {
    pub fn new(lat: f64, lng: f64) -> Result<Self, GeoError> {
        if !lat.is_finite() || !lng.is_finite() {
            return Err(GeoError::NonFinite);
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
        Ok(GeoPoint {
            lat,
            lng: normalize_lng(lng),
        })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lng(&self) -> f64 {
        self.lng
    }
}

impl fmt::Display for GeoPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.lat, self.lng)
    }
}

/// Wraps any finite longitude into `[-180, 180)`.
pub fn normalize_lng(lng: f64) -> f64 {
    if (-180.0..180.0).contains(&lng) {
        return lng;
    }
    let mut wrapped = (lng + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped -= 360.0;
    }
    wrapped
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ZoomLevel(u8);

impl ZoomLevel {
    pub fn new(z: i64) -> Result<Self, GeoError> {
        if (0..=MAX_ZOOM as i64).contains(&z) {
            Ok(ZoomLevel(z as u8))
        } else {
            Err(GeoError::ZoomOutOfRange(z))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// World edge length in pixels, `256 * 2^z`.
    pub fn world_size(self) -> f64 {
        TILE_SIZE * (1u64 << self.0) as f64
    }
}

impl TryFrom<u8> for ZoomLevel {
    type Error = GeoError;

    fn try_from(z: u8) -> Result<Self, Self::Error> {
        ZoomLevel::new(z as i64)
    }
}

impl From<ZoomLevel> for u8 {
    fn from(z: ZoomLevel) -> u8 {
        z.0
    }
}

impl fmt::Display for ZoomLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Web Mercator world pixel at a given zoom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPixel {
    x: f64,
    y: f64,
    zoom: ZoomLevel,
}

impl WorldPixel {
    pub fn new(x: f64, y: f64, zoom: ZoomLevel) -> Result<Self, GeoError> {
        let size = zoom.world_size();
        let in_range = |v: f64| v.is_finite() && (0.0..size).contains(&v);
        if !in_range(x) || !in_range(y) {
            return Err(GeoError::PixelOutOfRange {
                x,
                y,
                size,
                zoom: zoom.get(),
            });
        }
        Ok(WorldPixel { x, y, zoom })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn zoom(&self) -> ZoomLevel {
        self.zoom
    }
}

fn check_mercator_band(lat: f64) -> Result<(), GeoError> {
    if lat.abs() > MERCATOR_MAX_LAT {
        return Err(GeoError::OutsideMercatorBand {
            lat,
            bound: MERCATOR_MAX_LAT,
        });
    }
    Ok(())
}

/// Projects a point to world pixels.
///
/// The accepted band (`+/-85.05113`) reaches about a micro-degree past the
/// square-world edge; pixels landing there are pinned to the last
/// representable coordinate inside the world.
pub fn project(p: GeoPoint, zoom: ZoomLevel) -> Result<WorldPixel, GeoError> {
    check_mercator_band(p.lat)?;
    let size = zoom.world_size();
    let phi = p.lat.to_radians();
    let x = (p.lng + 180.0) / 360.0 * size;
    let y = (1.0 - (phi.tan() + 1.0 / phi.cos()).ln() / PI) / 2.0 * size;
    let edge = size.next_down();
    WorldPixel::new(x.clamp(0.0, edge), y.clamp(0.0, edge), zoom)
}

/// Inverse of [`project`] at the pixel's zoom.
pub fn unproject(px: WorldPixel) -> Result<GeoPoint, GeoError> {
    let size = px.zoom.world_size();
    if !(0.0..size).contains(&px.x) || !(0.0..size).contains(&px.y) {
        return Err(GeoError::PixelOutOfRange {
            x: px.x,
            y: px.y,
            size,
            zoom: px.zoom.get(),
        });
    }
    let lng = px.x / size * 360.0 - 180.0;
    let lat = (PI * (1.0 - 2.0 * px.y / size)).sinh().atan().to_degrees();
    GeoPoint::new(lat, lng)
}

/// Meters covered by one pixel at `lat` and `zoom`.
pub fn ground_resolution(lat: f64, zoom: ZoomLevel) -> Result<f64, GeoError> {
    if !lat.is_finite() {
        return Err(GeoError::NonFinite);
    }
    check_mercator_band(lat)?;
    let equatorial = lat.to_radians().cos() * 2.0 * PI * WEB_MERCATOR_RADIUS_M;
    Ok(equatorial / zoom.world_size())
}

/// Great-circle destination from `origin` after `distance_m` along `bearing_deg`.
pub fn destination_point(
    origin: GeoPoint,
    bearing_deg: f64,
    distance_m: f64,
) -> Result<GeoPoint, GeoError> {
    if !distance_m.is_finite() || distance_m < 0.0 {
        return Err(GeoError::NegativeDistance(distance_m));
    }
    if !bearing_deg.is_finite() {
        return Err(GeoError::NonFinite);
    }
    if distance_m == 0.0 {
        return Ok(origin);
    }
    let delta = distance_m / MEAN_EARTH_RADIUS_M;
    let theta = bearing_deg.to_radians();
    let phi1 = origin.lat.to_radians();
    let lambda1 = origin.lng.to_radians();

    let sin_phi2 = (phi1.sin() * delta.cos() + phi1.cos() * delta.sin() * theta.cos()).clamp(-1.0, 1.0);
    let phi2 = sin_phi2.asin();
    let lat2 = phi2.to_degrees();
    // at a pole the longitude is undefined; report 0
    if (lat2.abs() - 90.0).abs() < 1e-12 {
        return GeoPoint::new(lat2.clamp(-90.0, 90.0), 0.0);
    }
    let lambda2 = lambda1
        + (theta.sin() * delta.sin() * phi1.cos()).atan2(delta.cos() - phi1.sin() * sin_phi2);
    GeoPoint::new(lat2.clamp(-90.0, 90.0), lambda2.to_degrees())
}

/// Initial great-circle bearing from `from` to `to`, in `[0, 360)`.
pub fn initial_bearing(from: GeoPoint, to: GeoPoint) -> f64 {
    let phi1 = from.lat.to_radians();
    let phi2 = to.lat.to_radians();
    let dl = (to.lng - from.lng).to_radians();
    let y = dl.sin() * phi2.cos();
    let x = phi1.cos() * phi2.sin() - phi1.sin() * phi2.cos() * dl.cos();
    normalize_heading(y.atan2(x).to_degrees())
}

/// Great-circle distance in meters (haversine).
pub fn distance_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dl = (b.lng - a.lng).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * MEAN_EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Wraps a heading into `[0, 360)`.
pub fn normalize_heading(deg: f64) -> f64 {
    let h = deg.rem_euclid(360.0);
    if h >= 360.0 {
        0.0
    } else {
        h
    }
}

/// Smallest absolute angle between two headings, in `[0, 180]`.
pub fn circular_distance(a: f64, b: f64) -> f64 {
    let d = normalize_heading(a - b);
    d.min(360.0 - d)
}

/// A closed polygon ring (first vertex repeated at the end).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<GeoPoint>", into = "Vec<GeoPoint>")]
pub struct PolygonRing {
    vertices: Vec<GeoPoint>,
}

impl PolygonRing {
    /// Closes the ring if needed and checks it has three distinct vertices.
    pub fn new(mut vertices: Vec<GeoPoint>) -> Result<Self, GeoError> {
        vertices.dedup();
        if let (Some(first), Some(last)) = (vertices.first().copied(), vertices.last()) {
            if *last != first {
                vertices.push(first);
            }
        }
        let open = &vertices[..vertices.len().saturating_sub(1)];
        let mut distinct: Vec<GeoPoint> = Vec::with_capacity(open.len());
        for v in open {
            if !distinct.contains(v) {
                distinct.push(*v);
            }
        }
        if distinct.len() < 3 {
            return Err(GeoError::TooFewVertices(distinct.len()));
        }
        Ok(PolygonRing { vertices })
    }

    /// All vertices including the closing repeat.
    pub fn vertices(&self) -> &[GeoPoint] {
        &self.vertices
    }

    /// Vertices without the closing repeat.
    pub fn open_vertices(&self) -> &[GeoPoint] {
        &self.vertices[..self.vertices.len() - 1]
    }
}

impl TryFrom<Vec<GeoPoint>> for PolygonRing {
    type Error = GeoError;

    fn try_from(v: Vec<GeoPoint>) -> Result<Self, Self::Error> {
        PolygonRing::new(v)
    }
}

impl From<PolygonRing> for Vec<GeoPoint> {
    fn from(r: PolygonRing) -> Self {
        r.vertices
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub point: GeoPoint,
    /// Set when the ring has (numerically) zero area and the vertex mean was used.
    pub degenerate: bool,
}

/// Area-weighted centroid of a planar polygon given as an open or closed
/// vertex list. Returns `None` for zero-area input.
pub fn planar_centroid(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let (ox, oy) = points[0];
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let (x0, y0) = points[i];
        let (x1, y1) = points[(i + 1) % n];
        let (x0, y0, x1, y1) = (x0 - ox, y0 - oy, x1 - ox, y1 - oy);
        let cross = x0 * y1 - x1 * y0;
        twice_area += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let scale: f64 = points
        .iter()
        .map(|&(x, y)| (x - ox).abs().max((y - oy).abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 || twice_area.abs() <= 1e-12 * scale * scale {
        return None;
    }
    Some((ox + cx / (3.0 * twice_area), oy + cy / (3.0 * twice_area)))
}

/// Centroid of a ring, computed with the shoelace formula in an azimuthal
/// equidistant projection centered on the vertex mean.
pub fn ring_centroid(ring: &PolygonRing) -> Centroid {
    let open = ring.open_vertices();
    let anchor_lng = open[0].lng;
    let n = open.len() as f64;
    let mean_lat = open.iter().map(|p| p.lat).sum::<f64>() / n;
    // unwrap longitudes around the first vertex so antimeridian rings average sanely
    let mean_lng = open
        .iter()
        .map(|p| anchor_lng + normalize_lng(p.lng - anchor_lng))
        .sum::<f64>()
        / n;
    let center = GeoPoint::new(mean_lat, mean_lng).expect("mean of valid points is valid");

    let local: Vec<(f64, f64)> = open
        .iter()
        .map(|&p| {
            let d = distance_m(center, p);
            if d == 0.0 {
                return (0.0, 0.0);
            }
            let b = initial_bearing(center, p).to_radians();
            (d * b.sin(), d * b.cos())
        })
        .collect();

    match planar_centroid(&local) {
        Some((x, y)) => {
            let d = x.hypot(y);
            let bearing = x.atan2(y).to_degrees();
            let point = destination_point(center, normalize_heading(bearing), d)
                .expect("finite local coordinates");
            Centroid {
                point,
                degenerate: false,
            }
        }
        None => Centroid {
            point: center,
            degenerate: true,
        },
    }
}
