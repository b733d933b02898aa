//! Content-addressed image store.
//!
//! Objects live at `<root>/objects/<aa>/<sha256>.<ext>`; `<root>/manifest.json`
//! maps each asset id to its byte-level metadata. The asset id is always the
//! SHA-256 of the stored bytes, so writing the same image twice is a no-op.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::maps::StaticMapRequest;
use crate::orbit::CameraPose;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("body is not a supported image ({0})")]
    NotAnImage(String),
    #[error("unknown asset {0}")]
    UnknownAsset(String),
    #[error("stored bytes for {0} do not match their hash")]
    Corrupt(String),
    #[error("asset kind {kind:?} does not match its acquisition")]
    KindMismatch { kind: ImageKind },
    #[error("manifest at {path} is unreadable: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaType {
    Png,
    Jpeg,
}

impl MediaType {
    pub fn extension(self) -> &'static str {
        match self {
            MediaType::Png => "png",
            MediaType::Jpeg => "jpg",
        }
    }

    pub fn mime(self) -> &'static str {
        match self {
            MediaType::Png => "image/png",
            MediaType::Jpeg => "image/jpeg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub asset_id: String,
    pub media_type: MediaType,
    pub width_px: u32,
    pub height_px: u32,
    pub byte_len: u64,
    /// Relative to the store root.
    pub storage_path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    ObliqueOrbit,
    Satellite,
    StreetMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Acquisition {
    Orbit(CameraPose),
    Map(StaticMapRequest),
    /// Staged from a file with no acquisition metadata.
    Imported { file_name: String },
}

/// One image with the metadata of how it was acquired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub asset_id: String,
    pub kind: ImageKind,
    pub acquisition: Acquisition,
    pub width_px: u32,
    pub height_px: u32,
    pub media_type: MediaType,
    pub storage_path: String,
}

impl ImageAsset {
    pub fn new(object: &StoredObject, kind: ImageKind, acquisition: Acquisition) -> Result<Self, StoreError> {
        let consistent = match (&acquisition, kind) {
            (Acquisition::Orbit(_), ImageKind::ObliqueOrbit) => true,
            (Acquisition::Map(req), ImageKind::Satellite) => req.map_kind == crate::maps::MapKind::Satellite,
            (Acquisition::Map(req), ImageKind::StreetMap) => req.map_kind == crate::maps::MapKind::Roadmap,
            (Acquisition::Imported { .. }, _) => true,
            _ => false,
        };
        if !consistent {
            return Err(StoreError::KindMismatch { kind });
        }
        Ok(ImageAsset {
            asset_id: object.asset_id.clone(),
            kind,
            acquisition,
            width_px: object.width_px,
            height_px: object.height_px,
            media_type: object.media_type,
            storage_path: object.storage_path.clone(),
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Detects the format and pixel size of an encoded image.
pub fn inspect_image(bytes: &[u8]) -> Result<(MediaType, u32, u32), StoreError> {
    let format = image::guess_format(bytes).map_err(|e| StoreError::NotAnImage(e.to_string()))?;
    let media = match format {
        ImageFormat::Png => MediaType::Png,
        ImageFormat::Jpeg => MediaType::Jpeg,
        other => return Err(StoreError::NotAnImage(format!("unsupported format {other:?}"))),
    };
    let mut reader = ImageReader::new(Cursor::new(bytes));
    reader.set_format(format);
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| StoreError::NotAnImage(e.to_string()))?;
    Ok((media, w, h))
}

pub struct AssetStore {
    root: PathBuf,
    manifest: Mutex<BTreeMap<String, StoredObject>>,
}

impl AssetStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(io_err(&root))?;
        let manifest_path = root.join("manifest.json");
        let manifest = if manifest_path.exists() {
            let raw = std::fs::read(&manifest_path).map_err(io_err(&manifest_path))?;
            serde_json::from_slice(&raw).map_err(|e| StoreError::Manifest {
                path: manifest_path.clone(),
                reason: e.to_string(),
            })?
        } else {
            BTreeMap::new()
        };
        Ok(AssetStore {
            root,
            manifest: Mutex::new(manifest),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores image bytes, returning their metadata. Idempotent per content.
    pub fn put(&self, bytes: &[u8]) -> Result<StoredObject, StoreError> {
        let (media_type, width_px, height_px) = inspect_image(bytes)?;
        let asset_id = sha256_hex(bytes);
        let rel = format!("objects/{}/{}.{}", &asset_id[..2], asset_id, media_type.extension());
        let path = self.root.join(&rel);
        if !path.exists() {
            let dir = path.parent().expect("object path has a parent");
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            let tmp = dir.join(format!(".{}.{}.tmp", asset_id, std::process::id()));
            std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
            std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        let object = StoredObject {
            asset_id: asset_id.clone(),
            media_type,
            width_px,
            height_px,
            byte_len: bytes.len() as u64,
            storage_path: rel,
        };
        let mut manifest = self.manifest.lock().expect("manifest lock");
        if manifest.get(&asset_id) != Some(&object) {
            manifest.insert(asset_id, object.clone());
            self.persist(&manifest)?;
        }
        Ok(object)
    }

    fn persist(&self, manifest: &BTreeMap<String, StoredObject>) -> Result<(), StoreError> {
        let path = self.root.join("manifest.json");
        let tmp = self.root.join(format!(".manifest.{}.tmp", std::process::id()));
        let mut bytes = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        bytes.push(b'\n');
        std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    pub fn lookup(&self, asset_id: &str) -> Option<StoredObject> {
        self.manifest.lock().expect("manifest lock").get(asset_id).cloned()
    }

    /// Reads an asset back and verifies its hash.
    pub fn read(&self, asset_id: &str) -> Result<Vec<u8>, StoreError> {
        let object = self
            .lookup(asset_id)
            .ok_or_else(|| StoreError::UnknownAsset(asset_id.to_string()))?;
        let path = self.root.join(&object.storage_path);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if sha256_hex(&bytes) != asset_id {
            return Err(StoreError::Corrupt(asset_id.to_string()));
        }
        Ok(bytes)
    }

    pub fn len(&self) -> usize {
        self.manifest.lock().expect("manifest lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Optional index inside a staged image directory, keyed by file name.
pub const STAGING_INDEX: &str = "assets.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagedEntry {
    pub kind: ImageKind,
    pub acquisition: Acquisition,
}

fn guess_kind(file_name: &str) -> ImageKind {
    let lower = file_name.to_ascii_lowercase();
    if lower.starts_with("satellite") || lower.starts_with("sat_") {
        ImageKind::Satellite
    } else if lower.starts_with("roadmap") || lower.starts_with("street") {
        ImageKind::StreetMap
    } else {
        ImageKind::ObliqueOrbit
    }
}

/// Puts every PNG/JPEG file of `dir` into `store`, in file-name order.
/// Metadata comes from the directory's [`STAGING_INDEX`] when it lists the
/// file; otherwise the kind is guessed from the file name prefix.
pub fn stage_directory(dir: &Path, store: &AssetStore) -> Result<Vec<ImageAsset>, StoreError> {
    let index_path = dir.join(STAGING_INDEX);
    let index: BTreeMap<String, StagedEntry> = if index_path.exists() {
        let raw = std::fs::read(&index_path).map_err(io_err(&index_path))?;
        serde_json::from_slice(&raw).map_err(|e| StoreError::Manifest {
            path: index_path.clone(),
            reason: e.to_string(),
        })?
    } else {
        BTreeMap::new()
    };
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| {
            let l = n.to_ascii_lowercase();
            l.ends_with(".png") || l.ends_with(".jpg") || l.ends_with(".jpeg")
        })
        .collect();
    names.sort();
    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let path = dir.join(&name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        let object = store.put(&bytes)?;
        let (kind, acquisition) = match index.get(&name) {
            Some(e) => (e.kind, e.acquisition.clone()),
            None => (guess_kind(&name), Acquisition::Imported { file_name: name.clone() }),
        };
        out.push(ImageAsset::new(&object, kind, acquisition)?);
    }
    Ok(out)
}

/// Writes a staging index next to staged images.
pub fn write_staging_index(dir: &Path, entries: &BTreeMap<String, StagedEntry>) -> Result<(), StoreError> {
    let path = dir.join(STAGING_INDEX);
    let mut bytes = serde_json::to_vec_pretty(entries).expect("index serializes");
    bytes.push(b'\n');
    std::fs::write(&path, bytes).map_err(io_err(&path))
}

/// Deterministic PNG whose pixels are derived from `seed`. Used by the mock
/// map service and by tests that need real image bytes.
pub fn synthetic_png(width: u32, height: u32, seed: &[u8]) -> Vec<u8> {
    let digest = Sha256::digest(seed);
    let img = image::RgbImage::from_fn(width.max(1), height.max(1), |x, y| {
        let i = ((x / 8 + y / 8) as usize) % 10;
        image::Rgb([digest[i * 3], digest[i * 3 + 1], digest[i * 3 + 2] ^ (x as u8)])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staging_reads_files_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path().join("store")).unwrap();
        std::fs::write(dir.path().join("frame_001.png"), synthetic_png(4, 4, b"b")).unwrap();
        std::fs::write(dir.path().join("frame_000.png"), synthetic_png(4, 4, b"a")).unwrap();
        std::fs::write(dir.path().join("satellite_z18.png"), synthetic_png(4, 4, b"c")).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let assets = stage_directory(dir.path(), &store).unwrap();
        assert_eq!(assets.len(), 3);
        assert_eq!(assets[0].asset_id, sha256_hex(&synthetic_png(4, 4, b"a")));
        assert_eq!(assets[2].kind, ImageKind::Satellite);
        assert!(matches!(&assets[1].acquisition, Acquisition::Imported { file_name } if file_name == "frame_001.png"));
    }

    #[test]
    fn put_is_content_addressed_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let png = synthetic_png(16, 8, b"a");
        let a = store.put(&png).unwrap();
        let b = store.put(&png).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.asset_id, sha256_hex(&png));
        assert_eq!((a.width_px, a.height_px, a.media_type), (16, 8, MediaType::Png));
        assert_eq!(store.len(), 1);
        assert_eq!(store.read(&a.asset_id).unwrap(), png);
    }

    #[test]
    fn manifest_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let id = {
            let store = AssetStore::open(dir.path()).unwrap();
            store.put(&synthetic_png(4, 4, b"x")).unwrap().asset_id
        };
        let store = AssetStore::open(dir.path()).unwrap();
        assert!(store.lookup(&id).is_some());
    }

    #[test]
    fn rejects_non_images() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        assert!(matches!(store.put(b"{\"error\":1}"), Err(StoreError::NotAnImage(_))));
    }

    #[test]
    fn detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::open(dir.path()).unwrap();
        let obj = store.put(&synthetic_png(4, 4, b"y")).unwrap();
        std::fs::write(dir.path().join(&obj.storage_path), b"tampered").unwrap();
        assert!(matches!(store.read(&obj.asset_id), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn synthetic_png_is_deterministic() {
        assert_eq!(synthetic_png(8, 8, b"s"), synthetic_png(8, 8, b"s"));
        assert_ne!(synthetic_png(8, 8, b"s"), synthetic_png(8, 8, b"t"));
    }
}
