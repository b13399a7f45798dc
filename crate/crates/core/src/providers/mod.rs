//! Boundary adapters for everything produced upstream of the classifier:
//! image manifests, face detections (automatic or manual), manipulation
//! regions, face embeddings, head poses and uploader profile faces.
//!
//! All inputs are line-delimited JSON files with a schema header (see
//! [`crate::records`]). Pretrained models are optional; with the `onnx`
//! feature enabled the embedding and pose providers can run ONNX models.

mod embedding;
mod labels;
#[cfg(feature = "onnx")]
pub mod onnx;
mod pose;

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FaceObservation, HeadPose, Point};
use crate::imaging::RectRegion;
use crate::records::{self, RecordError};

pub use embedding::{
    cosine_similarity, stub_vector, Embedding, EmbeddingProvider, EmbeddingSource,
    EmbeddingTable, FaceCrop, SidecarEmbedder, StubEmbedder, EMBEDDING_DIM,
};
pub use labels::{
    load_features, load_labels, load_predictions, write_features, write_labels, write_predictions,
    FaceKey, FeatureRecord, LabelRecord, PredictionRecord, FEATURES_SCHEMA, LABELS_SCHEMA,
    PREDICTIONS_SCHEMA,
};
pub use pose::{PoseModel, PoseResolver, PoseWarning, ResolvedPose};

pub const MANIFEST_SCHEMA: &str = "facegate.manifest";
pub const FACES_SCHEMA: &str = "facegate.faces";
pub const REGIONS_SCHEMA: &str = "facegate.regions";
pub const EMBEDDINGS_SCHEMA: &str = "facegate.embeddings";
pub const PROFILES_SCHEMA: &str = "facegate.profiles";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}:{line}: duplicate id {id}")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: {id} is not in the manifest")]
    DanglingReference {
        path: PathBuf,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: {record}: {message}")]
    Validation {
        path: PathBuf,
        line: usize,
        record: String,
        message: String,
    },
    #[error("no embedding for face {face_id} of image {image_id}")]
    MissingEmbedding { image_id: String, face_id: String },
    #[error("face {0} has no pose and no pose model is configured")]
    MissingPose(String),
    #[error("zero-norm embedding")]
    DegenerateVector,
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("model provider: {0}")]
    Model(String),
}

/// How the uploader's profile picture was classified upstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileType {
    /// A real, non-celebrity face (the uploader's own).
    RealFace,
    NoHuman,
    Celebrity,
}

impl ProfileType {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileType::RealFace => "real_face",
            ProfileType::NoHuman => "no_human",
            ProfileType::Celebrity => "celebrity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageManifestEntry {
    pub image_id: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uploader_id: Option<String>,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub celebrity_only: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_account: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile_type: Option<ProfileType>,
}

/// Validated manifest. Relative image paths resolve against the directory
/// holding the manifest file.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    root: PathBuf,
    entries: Vec<ImageManifestEntry>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn from_entries(root: PathBuf, entries: Vec<ImageManifestEntry>) -> Result<Self, String> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.image_id.clone(), i).is_some() {
                return Err(format!("duplicate image_id {}", e.image_id));
            }
        }
        Ok(Self {
            root,
            entries,
            index,
        })
    }

    pub fn entries(&self) -> &[ImageManifestEntry] {
        &self.entries
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageManifestEntry> {
        self.index.get(image_id).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, entry: &ImageManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest, ProviderError> {
    let lines = records::read_records::<ImageManifestEntry>(path, MANIFEST_SCHEMA, SCHEMA_VERSION)?;
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(lines.len());
    for l in lines {
        if !seen.insert(l.value.image_id.clone()) {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: l.value.image_id,
            });
        }
        if l.value.width == 0 || l.value.height == 0 {
            return Err(ProviderError::Validation {
                path: path.to_path_buf(),
                line: l.line,
                record: l.value.image_id,
                message: "width and height must be positive".into(),
            });
        }
        entries.push(l.value);
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Manifest::from_entries(root, entries).expect("ids checked above"))
}

pub fn write_manifest(path: &Path, entries: &[ImageManifestEntry]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, MANIFEST_SCHEMA, SCHEMA_VERSION, entries)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Detector,
    Manual,
}

/// Box as written by upstream tools; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl RawBox {
    pub fn clip(&self, width: u32, height: u32) -> Option<RectRegion> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.w as i64).min(width as i64);
        let y1 = (self.y + self.h as i64).min(height as i64);
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(RectRegion::new(
            x0 as u32,
            y0 as u32,
            (x1 - x0) as u32,
            (y1 - y0) as u32,
        ))
    }
}

impl From<RectRegion> for RawBox {
    fn from(r: RectRegion) -> Self {
        Self {
            x: r.x as i64,
            y: r.y as i64,
            w: r.w,
            h: r.h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceRecord {
    pub face_id: String,
    #[serde(rename = "box")]
    pub bbox: RawBox,
    pub eye_left: Point,
    pub eye_right: Point,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<HeadPose>,
    /// Defaults to `true` for detector provenance, `false` for manual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detected: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceSidecarRecord {
    pub image_id: String,
    pub provenance: Provenance,
    pub faces: Vec<FaceRecord>,
}

/// Faces of one image from one source, validated against the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceSidecar {
    pub image_id: String,
    pub provenance: Provenance,
    pub faces: Vec<FaceObservation>,
}

pub fn load_face_sidecar(path: &Path, manifest: &Manifest) -> Result<Vec<FaceSidecar>, ProviderError> {
    let lines = records::read_records::<FaceSidecarRecord>(path, FACES_SCHEMA, SCHEMA_VERSION)?;
    let mut ids_per_image: HashMap<String, HashSet<String>> = HashMap::new();
    let mut out = Vec::with_capacity(lines.len());
    for l in lines {
        let rec = l.value;
        let entry = manifest
            .get(&rec.image_id)
            .ok_or_else(|| ProviderError::DanglingReference {
                path: path.to_path_buf(),
                line: l.line,
                id: rec.image_id.clone(),
            })?;
        let invalid = |face_id: &str, message: String| ProviderError::Validation {
            path: path.to_path_buf(),
            line: l.line,
            record: format!("{}/{}", rec.image_id, face_id),
            message,
        };
        let seen = ids_per_image.entry(rec.image_id.clone()).or_default();
        let mut faces = Vec::with_capacity(rec.faces.len());
        for f in rec.faces {
            if !seen.insert(f.face_id.clone()) {
                return Err(ProviderError::DuplicateId {
                    path: path.to_path_buf(),
                    line: l.line,
                    id: format!("{}/{}", rec.image_id, f.face_id),
                });
            }
            let bbox = f.bbox.clip(entry.width, entry.height).ok_or_else(|| {
                invalid(&f.face_id, "face box lies entirely outside the image".into())
            })?;
            for (name, p) in [("eye_left", f.eye_left), ("eye_right", f.eye_right)] {
                let inside = p.x >= 0.0
                    && p.y >= 0.0
                    && p.x <= entry.width as f64
                    && p.y <= entry.height as f64;
                if !inside {
                    return Err(invalid(
                        &f.face_id,
                        format!("{name} ({}, {}) lies outside the image", p.x, p.y),
                    ));
                }
            }
            if let Some(c) = f.confidence {
                if !(0.0..=1.0).contains(&c) {
                    return Err(invalid(&f.face_id, format!("confidence {c} outside [0, 1]")));
                }
            }
            faces.push(FaceObservation {
                face_id: f.face_id,
                bbox,
                eye_left: Some(f.eye_left),
                eye_right: Some(f.eye_right),
                pose: f.pose,
                detected: f.detected.unwrap_or(rec.provenance == Provenance::Detector),
                confidence: f.confidence,
            });
        }
        out.push(FaceSidecar {
            image_id: rec.image_id,
            provenance: rec.provenance,
            faces,
        });
    }
    Ok(out)
}

pub fn write_face_sidecar(path: &Path, records: &[FaceSidecarRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, FACES_SCHEMA, SCHEMA_VERSION, records)?)
}

/// Groups sidecar faces by image, keeping file order within each image.
pub fn faces_by_image(sidecars: &[FaceSidecar]) -> HashMap<&str, Vec<&FaceObservation>> {
    let mut out: HashMap<&str, Vec<&FaceObservation>> = HashMap::new();
    for s in sidecars {
        out.entry(s.image_id.as_str()).or_default().extend(s.faces.iter());
    }
    out
}

/// Drops detector faces whose confidence is below `threshold`. Faces without
/// a confidence value and manual faces are kept.
pub fn apply_detector_threshold(sidecars: &mut [FaceSidecar], threshold: f64) {
    for s in sidecars.iter_mut().filter(|s| s.provenance == Provenance::Detector) {
        s.faces.retain(|f| f.confidence.is_none_or(|c| c >= threshold));
    }
}

/// Region category from manipulation and face detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RegionType {
    /// Facial region with manipulation.
    FaceManipulated = 2,
    /// Manipulated region without a detected face.
    ManipulatedNoFace = 3,
    /// Neither face nor manipulation detected.
    Neither = 4,
}

impl TryFrom<u8> for RegionType {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            2 => Ok(RegionType::FaceManipulated),
            3 => Ok(RegionType::ManipulatedNoFace),
            4 => Ok(RegionType::Neither),
            other => Err(format!("region_type must be 2, 3 or 4, got {other}")),
        }
    }
}

impl From<RegionType> for u8 {
    fn from(t: RegionType) -> u8 {
        t as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRegionRecord {
    pub image_id: String,
    pub region_id: String,
    pub region: RawBox,
    pub region_type: RegionType,
    /// Face this region belongs to, when known. Otherwise faces are linked by
    /// overlap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManipulationRegion {
    pub image_id: String,
    pub region_id: String,
    pub region: RectRegion,
    pub region_type: RegionType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_id: Option<String>,
}

pub fn load_manipulation_regions(
    path: &Path,
    manifest: &Manifest,
) -> Result<Vec<ManipulationRegion>, ProviderError> {
    let lines =
        records::read_records::<ManipulationRegionRecord>(path, REGIONS_SCHEMA, SCHEMA_VERSION)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for l in lines {
        let rec = l.value;
        let entry = manifest
            .get(&rec.image_id)
            .ok_or_else(|| ProviderError::DanglingReference {
                path: path.to_path_buf(),
                line: l.line,
                id: rec.image_id.clone(),
            })?;
        let key = format!("{}/{}", rec.image_id, rec.region_id);
        if !seen.insert(key.clone()) {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: key,
            });
        }
        let region = rec
            .region
            .clip(entry.width, entry.height)
            .ok_or_else(|| ProviderError::Validation {
                path: path.to_path_buf(),
                line: l.line,
                record: key,
                message: "region lies entirely outside the image".into(),
            })?;
        out.push(ManipulationRegion {
            image_id: rec.image_id,
            region_id: rec.region_id,
            region,
            region_type: rec.region_type,
            face_id: rec.face_id,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub face_id: String,
    pub embedding: Vec<f64>,
}

/// Loads precomputed face embeddings keyed by `(image_id, face_id)`.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, ProviderError> {
    let lines = records::read_records::<EmbeddingRecord>(path, EMBEDDINGS_SCHEMA, SCHEMA_VERSION)?;
    let mut table = EmbeddingTable::default();
    for l in lines {
        let key = (l.value.image_id, l.value.face_id);
        let emb = Embedding::new(l.value.embedding, EmbeddingSource::Sidecar).map_err(|e| {
            ProviderError::Validation {
                path: path.to_path_buf(),
                line: l.line,
                record: format!("{}/{}", key.0, key.1),
                message: e.to_string(),
            }
        })?;
        if table.insert(key.clone(), emb).is_some() {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: format!("{}/{}", key.0, key.1),
            });
        }
    }
    Ok(table)
}

pub fn write_embeddings(path: &Path, records: &[EmbeddingRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, EMBEDDINGS_SCHEMA, SCHEMA_VERSION, records)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub uploader_id: String,
    #[serde(default)]
    pub embeddings: Vec<Vec<f64>>,
}

/// Loads uploader profile-face embeddings keyed by uploader id.
pub fn load_profiles(path: &Path) -> Result<HashMap<String, Vec<Embedding>>, ProviderError> {
    let lines = records::read_records::<ProfileRecord>(path, PROFILES_SCHEMA, SCHEMA_VERSION)?;
    let mut out = HashMap::new();
    for l in lines {
        let embeddings = l
            .value
            .embeddings
            .into_iter()
            .map(|v| Embedding::new(v, EmbeddingSource::Sidecar))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ProviderError::Validation {
                path: path.to_path_buf(),
                line: l.line,
                record: l.value.uploader_id.clone(),
                message: e.to_string(),
            })?;
        if out.insert(l.value.uploader_id.clone(), embeddings).is_some() {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: l.value.uploader_id,
            });
        }
    }
    Ok(out)
}

pub fn write_profiles(path: &Path, records: &[ProfileRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, PROFILES_SCHEMA, SCHEMA_VERSION, records)?)
}

/// Model locations for the optional ONNX providers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(default)]
    pub detector_model: Option<PathBuf>,
    #[serde(default)]
    pub pose_model: Option<PathBuf>,
    #[serde(default)]
    pub embed_model: Option<PathBuf>,
    /// Minimum detector confidence; no default is imposed.
    #[serde(default)]
    pub detector_threshold: Option<f64>,
}

impl ProviderConfig {
    /// Reads `FACEGATE_DETECTOR`, `FACEGATE_POSE` and `FACEGATE_EMBED`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var_os(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        Self {
            detector_model: var("FACEGATE_DETECTOR"),
            pose_model: var("FACEGATE_POSE"),
            embed_model: var("FACEGATE_EMBED"),
            detector_threshold: None,
        }
    }

    /// Fills unset fields from `other`.
    pub fn or(self, other: ProviderConfig) -> Self {
        Self {
            detector_model: self.detector_model.or(other.detector_model),
            pose_model: self.pose_model.or(other.pose_model),
            embed_model: self.embed_model.or(other.embed_model),
            detector_threshold: self.detector_threshold.or(other.detector_threshold),
        }
    }
}
