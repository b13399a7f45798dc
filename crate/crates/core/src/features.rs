//! Per-face handcrafted features and the fused classifier input.
//!
//! The handcrafted record has a fixed 20-slot layout (see [`idx`]). The fused
//! vector is the 512-d face embedding followed by those 20 values.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{contrast, laplacian_variance, GrayImage, RectRegion};
use crate::providers::{Embedding, EMBEDDING_DIM};

pub const HANDCRAFTED_DIM: usize = 20;
pub const FUSED_DIM: usize = EMBEDDING_DIM + HANDCRAFTED_DIM;
pub const GRID_REGIONS: usize = 9;

/// Slot indices of [`HandcraftedFeatures`].
pub mod idx {
    pub const SIZE_RATIO_IMAGE: usize = 0;
    pub const SIZE_RATIO_MAX: usize = 1;
    pub const REGION_INDEX: usize = 2;
    pub const TOTAL_FACE_COUNT: usize = 3;
    /// First of nine per-region face counts (regions 1..=9).
    pub const REGION_COUNTS: usize = 4;
    pub const YAW: usize = 13;
    pub const PITCH: usize = 14;
    pub const ROLL: usize = 15;
    pub const BLUR_RATIO_IMAGE: usize = 16;
    pub const BLUR_RATIO_MAX: usize = 17;
    pub const CONTRAST_RATIO_IMAGE: usize = 18;
    pub const CONTRAST_RATIO_MAX: usize = 19;
}

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("face {face_id} is missing an eye landmark")]
    MissingLandmark { face_id: String },
    #[error("point ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("face {0} is not among the image's faces")]
    UnknownFace(String),
    #[error("face {0} has no resolved head pose")]
    MissingPose(String),
    #[error("mask {0} requires a face embedding")]
    MissingEmbedding(FeatureMask),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid head pose: {0}")]
    InvalidPose(String),
    #[error("no training vectors")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Head orientation in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose")]
pub struct HeadPose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

#[derive(Deserialize)]
struct RawPose {
    yaw: f64,
    pitch: f64,
    roll: f64,
}

impl TryFrom<RawPose> for HeadPose {
    type Error = FeatureError;

    fn try_from(r: RawPose) -> Result<Self, Self::Error> {
        HeadPose::new(r.yaw, r.pitch, r.roll)
    }
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Result<Self, FeatureError> {
        for (name, v) in [("yaw", yaw), ("pitch", pitch), ("roll", roll)] {
            if !v.is_finite() || !(-180.0..=180.0).contains(&v) {
                return Err(FeatureError::InvalidPose(format!(
                    "{name} = {v} is outside [-180, 180]"
                )));
            }
        }
        Ok(Self { yaw, pitch, roll })
    }
}

/// A detected or manually annotated face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub face_id: String,
    #[serde(rename = "box")]
    pub bbox: RectRegion,
    pub eye_left: Option<Point>,
    pub eye_right: Option<Point>,
    #[serde(default)]
    pub pose: Option<HeadPose>,
    /// `true` for detector output, `false` for manually annotated faces.
    pub detected: bool,
    #[serde(default)]
    pub confidence: Option<f64>,
}

pub fn eye_midpoint(face: &FaceObservation) -> Result<Point, FeatureError> {
    match (face.eye_left, face.eye_right) {
        (Some(l), Some(r)) => Ok(Point::new((l.x + r.x) / 2.0, (l.y + r.y) / 2.0)),
        _ => Err(FeatureError::MissingLandmark {
            face_id: face.face_id.clone(),
        }),
    }
}

/// Cell of the 3x3 grid containing `p`, numbered row-major from 1 (top-left)
/// to 9 (bottom-right). Cells are half-open; the right and bottom image edges
/// belong to the last column and row.
pub fn region_of(p: Point, width: u32, height: u32) -> Result<u8, FeatureError> {
    let (w, h) = (width as f64, height as f64);
    if !(p.x >= 0.0 && p.x <= w && p.y >= 0.0 && p.y <= h) || width == 0 || height == 0 {
        return Err(FeatureError::OutOfBounds {
            x: p.x,
            y: p.y,
            width,
            height,
        });
    }
    let cell = |v: f64, extent: f64| -> u8 {
        if v < extent / 3.0 {
            0
        } else if v < 2.0 * extent / 3.0 {
            1
        } else {
            2
        }
    };
    Ok(cell(p.y, h) * 3 + cell(p.x, w) + 1)
}

/// The fixed-layout 20-value handcrafted record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HandcraftedFeatures(pub [f64; HANDCRAFTED_DIM]);

impl HandcraftedFeatures {
    pub fn values(&self) -> &[f64; HANDCRAFTED_DIM] {
        &self.0
    }

    pub fn size_ratio_image(&self) -> f64 {
        self.0[idx::SIZE_RATIO_IMAGE]
    }

    pub fn size_ratio_max(&self) -> f64 {
        self.0[idx::SIZE_RATIO_MAX]
    }

    pub fn region_index(&self) -> u8 {
        self.0[idx::REGION_INDEX] as u8
    }

    pub fn total_face_count(&self) -> f64 {
        self.0[idx::TOTAL_FACE_COUNT]
    }

    pub fn region_counts(&self) -> &[f64] {
        &self.0[idx::REGION_COUNTS..idx::REGION_COUNTS + GRID_REGIONS]
    }

    pub fn pose(&self) -> [f64; 3] {
        [self.0[idx::YAW], self.0[idx::PITCH], self.0[idx::ROLL]]
    }

    /// Checks the record's structural invariants. Returns the first violated
    /// one as text.
    pub fn check(&self) -> Result<(), String> {
        const EPS: f64 = 1e-9;
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(format!("slot {i} is not finite"));
        }
        for i in [idx::SIZE_RATIO_IMAGE, idx::SIZE_RATIO_MAX] {
            if !(0.0..=1.0 + EPS).contains(&self.0[i]) {
                return Err(format!("size ratio slot {i} = {} outside [0, 1]", self.0[i]));
            }
        }
        if !(1..=9).contains(&self.region_index()) {
            return Err(format!("region index {} outside 1..=9", self.0[idx::REGION_INDEX]));
        }
        let counted: f64 = self.region_counts().iter().sum();
        if counted != self.total_face_count() {
            return Err(format!(
                "region counts sum to {counted}, total face count is {}",
                self.total_face_count()
            ));
        }
        Ok(())
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// Extracts the handcrafted record of every face in one image, in input
/// order. Blurriness and contrast are measured over each face box and over
/// the full image; every ratio with a zero denominator is 0.
pub fn extract_image_features(
    image: &GrayImage,
    faces: &[FaceObservation],
) -> Result<Vec<HandcraftedFeatures>, FeatureError> {
    let (w, h) = (image.width(), image.height());
    let image_area = w as f64 * h as f64;
    let full = image.full_region();
    let image_blur = laplacian_variance(image, &full).value;
    let image_contrast = contrast(image, &full).value;

    let mut regions = Vec::with_capacity(faces.len());
    let mut sizes = Vec::with_capacity(faces.len());
    let mut blurs = Vec::with_capacity(faces.len());
    let mut contrasts = Vec::with_capacity(faces.len());
    let mut region_counts = [0.0; GRID_REGIONS];
    for face in faces {
        let region = region_of(eye_midpoint(face)?, w, h)?;
        region_counts[region as usize - 1] += 1.0;
        regions.push(region);
        sizes.push(face.bbox.clip_to(w, h).map_or(0, |b| b.area()) as f64);
        blurs.push(laplacian_variance(image, &face.bbox).value);
        contrasts.push(contrast(image, &face.bbox).value);
    }
    let (size_max, blur_max, contrast_max) = (max_of(&sizes), max_of(&blurs), max_of(&contrasts));

    faces
        .iter()
        .enumerate()
        .map(|(i, face)| {
            let pose = face
                .pose
                .ok_or_else(|| FeatureError::MissingPose(face.face_id.clone()))?;
            let mut v = [0.0; HANDCRAFTED_DIM];
            v[idx::SIZE_RATIO_IMAGE] = ratio(sizes[i], image_area);
            v[idx::SIZE_RATIO_MAX] = ratio(sizes[i], size_max);
            v[idx::REGION_INDEX] = regions[i] as f64;
            v[idx::TOTAL_FACE_COUNT] = faces.len() as f64;
            v[idx::REGION_COUNTS..idx::REGION_COUNTS + GRID_REGIONS]
                .copy_from_slice(&region_counts);
            v[idx::YAW] = pose.yaw;
            v[idx::PITCH] = pose.pitch;
            v[idx::ROLL] = pose.roll;
            v[idx::BLUR_RATIO_IMAGE] = ratio(blurs[i], image_blur);
            v[idx::BLUR_RATIO_MAX] = ratio(blurs[i], blur_max);
            v[idx::CONTRAST_RATIO_IMAGE] = ratio(contrasts[i], image_contrast);
            v[idx::CONTRAST_RATIO_MAX] = ratio(contrasts[i], contrast_max);
            Ok(HandcraftedFeatures(v))
        })
        .collect()
}

/// Handcrafted record of one face, with image-level maxima taken over
/// `all_faces`.
pub fn extract_handcrafted(
    image: &GrayImage,
    all_faces: &[FaceObservation],
    target: &str,
) -> Result<HandcraftedFeatures, FeatureError> {
    let pos = all_faces
        .iter()
        .position(|f| f.face_id == target)
        .ok_or_else(|| FeatureError::UnknownFace(target.to_string()))?;
    Ok(extract_image_features(image, all_faces)?[pos])
}

/// Which feature groups feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureMask {
    /// Face-related handcrafted features only.
    #[serde(rename = "FF")]
    Ff,
    /// Face-region embedding only.
    #[serde(rename = "FM")]
    Fm,
    #[serde(rename = "FF+FM")]
    FfFm,
}

impl FeatureMask {
    pub const ALL: [FeatureMask; 3] = [FeatureMask::Ff, FeatureMask::Fm, FeatureMask::FfFm];

    pub fn dim(self) -> usize {
        match self {
            FeatureMask::Ff => HANDCRAFTED_DIM,
            FeatureMask::Fm => EMBEDDING_DIM,
            FeatureMask::FfFm => FUSED_DIM,
        }
    }

    pub fn needs_embedding(self) -> bool {
        !matches!(self, FeatureMask::Ff)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMask::Ff => "FF",
            FeatureMask::Fm => "FM",
            FeatureMask::FfFm => "FF+FM",
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FF" => Ok(FeatureMask::Ff),
            "FM" => Ok(FeatureMask::Fm),
            "FF+FM" | "FFFM" | "ALL" => Ok(FeatureMask::FfFm),
            other => Err(format!("unknown feature mask {other:?} (expected FF, FM or FF+FM)")),
        }
    }
}

/// Classifier input whose length always matches its mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVector")]
pub struct FeatureVector {
    values: Vec<f64>,
    mask: FeatureMask,
}

#[derive(Deserialize)]
struct RawVector {
    values: Vec<f64>,
    mask: FeatureMask,
}

impl TryFrom<RawVector> for FeatureVector {
    type Error = FeatureError;

    fn try_from(r: RawVector) -> Result<Self, Self::Error> {
        FeatureVector::new(r.values, r.mask)
    }
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, mask: FeatureMask) -> Result<Self, FeatureError> {
        if values.len() != mask.dim() {
            return Err(FeatureError::ShapeMismatch {
                expected: mask.dim(),
                got: values.len(),
            });
        }
        Ok(Self { values, mask })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Restricts a fused vector to the groups selected by `mask`.
    pub fn project(&self, mask: FeatureMask) -> Result<FeatureVector, FeatureError> {
        if self.mask == mask {
            return Ok(self.clone());
        }
        if self.mask != FeatureMask::FfFm {
            return Err(FeatureError::ShapeMismatch {
                expected: FUSED_DIM,
                got: self.values.len(),
            });
        }
        let values = match mask {
            FeatureMask::Ff => self.values[EMBEDDING_DIM..].to_vec(),
            FeatureMask::Fm => self.values[..EMBEDDING_DIM].to_vec(),
            FeatureMask::FfFm => unreachable!(),
        };
        FeatureVector::new(values, mask)
    }
}

/// Concatenates embedding then handcrafted values as selected by `mask`.
pub fn assemble_feature_vector(
    hand: &HandcraftedFeatures,
    embedding: Option<&Embedding>,
    mask: FeatureMask,
) -> Result<FeatureVector, FeatureError> {
    let embedding = if mask.needs_embedding() {
        Some(embedding.ok_or(FeatureError::MissingEmbedding(mask))?)
    } else {
        None
    };
    let mut values = Vec::with_capacity(mask.dim());
    if let Some(e) = embedding {
        values.extend_from_slice(e.values());
    }
    if mask != FeatureMask::Fm {
        values.extend_from_slice(hand.values());
    }
    FeatureVector::new(values, mask)
}

/// Per-dimension z-score parameters fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Population std below this is treated as a constant dimension.
const CONSTANT_STD: f64 = 1e-12;

impl Scaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn fit<'a, I>(rows: I) -> Result<Self, FeatureError>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows.first().ok_or(FeatureError::EmptyInput)?;
        let dim = first.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(FeatureError::ShapeMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < CONSTANT_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>, FeatureError> {
        if values.len() != self.dim() {
            return Err(FeatureError::ShapeMismatch {
                expected: self.dim(),
                got: values.len(),
            });
        }
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

pub fn fit_scaler(training: &[FeatureVector]) -> Result<Scaler, FeatureError> {
    Scaler::fit(training.iter().map(|v| v.values()))
}

pub fn apply_scaler(scaler: &Scaler, v: &FeatureVector) -> Result<FeatureVector, FeatureError> {
    FeatureVector::new(scaler.transform(v.values())?, v.mask())
}
