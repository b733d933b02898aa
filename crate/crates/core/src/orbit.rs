//! Orbital camera paths around a building, the `.orbit` keyframe document,
//! intake of externally rendered frames and heading-based subsampling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{circular_distance, destination_point, initial_bearing, normalize_heading, GeoError, GeoPoint};
use crate::store::{Acquisition, AssetStore, ImageAsset, ImageKind, StoreError};

pub const ORBIT_FORMAT: &str = "dba-orbit";
pub const ORBIT_VERSION: u32 = 1;
pub const DEFAULT_TILT_DEG: f64 = 45.0;

#[derive(Debug, Error)]
pub enum OrbitError {
    #[error("invalid orbit: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("orbit document: {0}")]
    Document(String),
    #[error("missing frames {missing:?} in {dir}")]
    MissingFrames { dir: PathBuf, missing: Vec<usize> },
    #[error("cannot read {dir}: {source}")]
    Io {
        dir: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One camera on an orbit. The camera sits `orbit_radius_m` from the target
/// along `heading_deg` and looks back at the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub target: GeoPoint,
    pub camera_position: GeoPoint,
    pub altitude_m: f64,
    pub heading_deg: f64,
    /// Degrees from nadir.
    pub tilt_deg: f64,
    pub orbit_radius_m: f64,
}

impl CameraPose {
    pub fn new(
        target: GeoPoint,
        heading_deg: f64,
        orbit_radius_m: f64,
        altitude_m: f64,
        tilt_deg: f64,
    ) -> Result<Self, OrbitError> {
        if !(orbit_radius_m > 0.0 && orbit_radius_m.is_finite()) {
            return Err(OrbitError::Invalid(format!("orbit radius must be positive, got {orbit_radius_m}")));
        }
        let heading_deg = normalize_heading(heading_deg);
        Ok(CameraPose {
            target,
            camera_position: destination_point(target, heading_deg, orbit_radius_m)?,
            altitude_m,
            heading_deg,
            tilt_deg,
            orbit_radius_m,
        })
    }

    /// Bearing from the camera to the target in the target-centered orbit
    /// frame (azimuthal equidistant about the target), recovered from the
    /// stored camera position. Equals `heading + 180` for a consistent pose.
    pub fn look_at_bearing(&self) -> f64 {
        normalize_heading(initial_bearing(self.target, self.camera_position) + 180.0)
    }

    /// Great-circle initial bearing from the camera toward the target; the
    /// yaw a renderer should use. Differs from [`look_at_bearing`](Self::look_at_bearing)
    /// by meridian convergence, which grows with latitude and radius.
    pub fn geodesic_yaw(&self) -> f64 {
        initial_bearing(self.camera_position, self.target)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitSpec {
    pub target: GeoPoint,
    pub count: usize,
    pub orbit_radius_m: f64,
    pub altitude_m: f64,
    pub tilt_deg: f64,
    pub start_heading_deg: f64,
}

impl OrbitSpec {
    pub fn new(target: GeoPoint, count: usize, orbit_radius_m: f64, altitude_m: f64) -> Self {
        OrbitSpec {
            target,
            count,
            orbit_radius_m,
            altitude_m,
            tilt_deg: DEFAULT_TILT_DEG,
            start_heading_deg: 0.0,
        }
    }

    fn validate(&self) -> Result<(), OrbitError> {
        if self.count == 0 {
            return Err(OrbitError::Invalid("pose count must be at least 1".into()));
        }
        if self.orbit_radius_m.is_nan() || self.orbit_radius_m <= 0.0 {
            return Err(OrbitError::Invalid("orbit radius must be positive".into()));
        }
        if !self.altitude_m.is_finite() || !self.tilt_deg.is_finite() || !self.start_heading_deg.is_finite() {
            return Err(OrbitError::Invalid("orbit parameters must be finite".into()));
        }
        Ok(())
    }
}

/// `count` poses with headings `start + k * 360 / count`.
pub fn generate_orbit(spec: &OrbitSpec) -> Result<Vec<CameraPose>, OrbitError> {
    spec.validate()?;
    let gap = 360.0 / spec.count as f64;
    (0..spec.count)
        .map(|k| {
            CameraPose::new(
                spec.target,
                spec.start_heading_deg + k as f64 * gap,
                spec.orbit_radius_m,
                spec.altitude_m,
                spec.tilt_deg,
            )
        })
        .collect()
}

/// For each target heading `first + j * step` below 360 degrees past the
/// first pose, picks the not-yet-chosen pose closest in circular heading
/// (ties go to the lower index). The result keeps orbit order.
pub fn subsample_by_heading(poses: &[CameraPose], step_deg: f64) -> Vec<CameraPose> {
    subsample_indices(poses, step_deg)
        .into_iter()
        .map(|i| poses[i])
        .collect()
}

pub fn subsample_indices(poses: &[CameraPose], step_deg: f64) -> Vec<usize> {
    if poses.is_empty() || step_deg.is_nan() || step_deg <= 0.0 {
        return Vec::new();
    }
    let base = poses[0].heading_deg;
    let mut chosen: Vec<usize> = Vec::new();
    let mut j = 0usize;
    while (j as f64) * step_deg < 360.0 {
        let wanted = base + j as f64 * step_deg;
        let best = poses
            .iter()
            .enumerate()
            .filter(|(i, _)| !chosen.contains(i))
            .map(|(i, p)| (i, circular_distance(p.heading_deg, wanted)))
            .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            });
        match best {
            Some((i, _)) => chosen.push(i),
            None => break,
        }
        j += 1;
    }
    chosen.sort_unstable();
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrbitFrame {
    index: usize,
    camera: GeoPoint,
    altitude_m: f64,
    heading_deg: f64,
    tilt_deg: f64,
    orbit_radius_m: f64,
    look_at_bearing_deg: f64,
    geodesic_yaw_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OrbitDocument {
    format: String,
    version: u32,
    target: GeoPoint,
    frames: Vec<OrbitFrame>,
}

/// Serializes poses into the versioned `.orbit` JSON document.
pub fn export_orbit_document(poses: &[CameraPose]) -> Result<String, OrbitError> {
    let first = poses
        .first()
        .ok_or_else(|| OrbitError::Invalid("cannot export an empty orbit".into()))?;
    if poses.iter().any(|p| p.target != first.target) {
        return Err(OrbitError::Invalid("all poses must share one target".into()));
    }
    let doc = OrbitDocument {
        format: ORBIT_FORMAT.to_string(),
        version: ORBIT_VERSION,
        target: first.target,
        frames: poses
            .iter()
            .enumerate()
            .map(|(index, p)| OrbitFrame {
                index,
                camera: p.camera_position,
                altitude_m: p.altitude_m,
                heading_deg: p.heading_deg,
                tilt_deg: p.tilt_deg,
                orbit_radius_m: p.orbit_radius_m,
                look_at_bearing_deg: p.look_at_bearing(),
                geodesic_yaw_deg: p.geodesic_yaw(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| OrbitError::Document(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn parse_orbit_document(text: &str) -> Result<Vec<CameraPose>, OrbitError> {
    let doc: OrbitDocument = serde_json::from_str(text).map_err(|e| OrbitError::Document(e.to_string()))?;
    if doc.format != ORBIT_FORMAT || doc.version != ORBIT_VERSION {
        return Err(OrbitError::Document(format!(
            "unsupported document {} v{}",
            doc.format, doc.version
        )));
    }
    doc.frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.index != i {
                return Err(OrbitError::Document(format!("frame {i} carries index {}", f.index)));
            }
            Ok(CameraPose {
                target: doc.target,
                camera_position: f.camera,
                altitude_m: f.altitude_m,
                heading_deg: f.heading_deg,
                tilt_deg: f.tilt_deg,
                orbit_radius_m: f.orbit_radius_m,
            })
        })
        .collect()
}

/// File name stem for frame `index`: `frame_007`.
pub fn frame_stem(index: usize) -> String {
    format!("frame_{index:03}")
}

#[derive(Debug)]
pub struct IntakeFailure {
    pub index: usize,
    pub path: PathBuf,
    pub error: StoreError,
}

#[derive(Debug, Default)]
pub struct IntakeOutcome {
    pub assets: Vec<ImageAsset>,
    pub failures: Vec<IntakeFailure>,
}

/// Hashes `frame_{index:03}.{ext}` files into the store as oblique assets,
/// one per pose. Missing frames fail the whole intake; unreadable files are
/// reported per frame.
pub fn intake_images(dir: &Path, poses: &[CameraPose], store: &AssetStore) -> Result<IntakeOutcome, OrbitError> {
    let io = |source| OrbitError::Io {
        dir: dir.to_path_buf(),
        source,
    };
    let mut by_index: BTreeMap<usize, PathBuf> = BTreeMap::new();
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e.collect::<Result<Vec<_>, _>>().map_err(io)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io(e)),
    };
    for entry in entries {
        let path = entry.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if let Some(index) = stem.strip_prefix("frame_").and_then(|n| n.parse::<usize>().ok()) {
            if stem == frame_stem(index) && index < poses.len() {
                by_index.entry(index).or_insert(path);
            }
        }
    }
    let missing: Vec<usize> = (0..poses.len()).filter(|i| !by_index.contains_key(i)).collect();
    if !missing.is_empty() {
        return Err(OrbitError::MissingFrames {
            dir: dir.to_path_buf(),
            missing,
        });
    }

    let jobs: Vec<(usize, PathBuf)> = by_index.into_iter().collect();
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(4).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(workers).max(1);
    let results: Vec<(usize, PathBuf, Result<ImageAsset, StoreError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(index, path)| {
                            let result = std::fs::read(path)
                                .map_err(|source| StoreError::Io {
                                    path: path.clone(),
                                    source,
                                })
                                .and_then(|bytes| store.put(&bytes))
                                .and_then(|obj| {
                                    ImageAsset::new(&obj, ImageKind::ObliqueOrbit, Acquisition::Orbit(poses[*index]))
                                });
                            (*index, path.clone(), result)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("intake worker panicked"))
            .collect()
    });

    let mut outcome = IntakeOutcome::default();
    for (index, path, result) in results {
        match result {
            Ok(asset) => outcome.assets.push(asset),
            Err(error) => outcome.failures.push(IntakeFailure { index, path, error }),
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::synthetic_png;

    fn target() -> GeoPoint {
        GeoPoint::new(43.4634, -80.5204).unwrap()
    }

    fn orbit(count: usize) -> Vec<CameraPose> {
        generate_orbit(&OrbitSpec::new(target(), count, 250.0, 150.0)).unwrap()
    }

    #[test]
    fn thirty_one_pose_orbit() {
        let poses = orbit(31);
        assert_eq!(poses.len(), 31);
        for w in poses.windows(2) {
            assert!((w[1].heading_deg - w[0].heading_deg - 360.0 / 31.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_pose_orbit_starts_at_start_heading() {
        let mut spec = OrbitSpec::new(target(), 1, 100.0, 50.0);
        spec.start_heading_deg = 37.0;
        let poses = generate_orbit(&spec).unwrap();
        assert_eq!(poses.len(), 1);
        assert_eq!(poses[0].heading_deg, 37.0);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(generate_orbit(&OrbitSpec::new(target(), 0, 100.0, 50.0)).is_err());
        assert!(generate_orbit(&OrbitSpec::new(target(), 3, 0.0, 50.0)).is_err());
    }

    #[test]
    fn four_pose_orbit_forms_a_square() {
        let poses = orbit(4);
        let headings: Vec<f64> = poses.iter().map(|p| p.heading_deg).collect();
        assert_eq!(headings, vec![0.0, 90.0, 180.0, 270.0]);
        for p in &poses {
            let b = initial_bearing(target(), p.camera_position);
            assert!(circular_distance(b, p.heading_deg) < 1e-6);
            assert!((crate::geo::distance_m(target(), p.camera_position) - 250.0).abs() < 1e-6);
        }
    }

    #[test]
    fn subsample_default_orbit() {
        assert_eq!(subsample_by_heading(&orbit(31), 70.0).len(), 6);
        let one = subsample_by_heading(&orbit(31), 360.0);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0], orbit(31)[0]);
    }

    #[test]
    fn subsample_ten_degree_orbit() {
        let picked: Vec<f64> = subsample_by_heading(&orbit(36), 70.0)
            .iter()
            .map(|p| p.heading_deg.round())
            .collect();
        assert_eq!(picked, vec![0.0, 70.0, 140.0, 210.0, 280.0, 350.0]);
    }

    #[test]
    fn document_round_trip_and_determinism() {
        let poses = orbit(5);
        let a = export_orbit_document(&poses).unwrap();
        let b = export_orbit_document(&poses).unwrap();
        assert_eq!(a, b);
        assert_eq!(parse_orbit_document(&a).unwrap(), poses);
        assert!(export_orbit_document(&[]).is_err());
    }

    #[test]
    fn intake_reports_all_missing_frames() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path().join("store")).unwrap();
        match intake_images(&dir.path().join("frames"), &orbit(31), &store) {
            Err(OrbitError::MissingFrames { missing, .. }) => assert_eq!(missing, (0..31).collect::<Vec<_>>()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn intake_shares_hash_but_not_pose() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path().join("store")).unwrap();
        let frames = dir.path().join("frames");
        std::fs::create_dir_all(&frames).unwrap();
        let png = synthetic_png(8, 8, b"same");
        std::fs::write(frames.join("frame_000.png"), &png).unwrap();
        std::fs::write(frames.join("frame_001.png"), &png).unwrap();
        std::fs::write(frames.join("frame_002.png"), b"not an image").unwrap();
        let poses = orbit(3);
        let out = intake_images(&frames, &poses, &store).unwrap();
        assert_eq!(out.assets.len(), 2);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].index, 2);
        assert_eq!(out.assets[0].asset_id, out.assets[1].asset_id);
        assert_ne!(out.assets[0].acquisition, out.assets[1].acquisition);
    }
}
