use std::collections::HashMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ProviderError;
use crate::features::FaceObservation;

pub const EMBEDDING_DIM: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Model,
    Sidecar,
    Stub,
}

/// A 512-d face descriptor with finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
    source: EmbeddingSource,
}

impl Embedding {
    pub fn new(values: Vec<f64>, source: EmbeddingSource) -> Result<Self, ProviderError> {
        if values.len() != EMBEDDING_DIM {
            return Err(ProviderError::InvalidEmbedding(format!(
                "expected {EMBEDDING_DIM} values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ProviderError::InvalidEmbedding(format!("component {i} is not finite")));
        }
        Ok(Self { values, source })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Cosine of the angle between two embeddings, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64, ProviderError> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(ProviderError::DegenerateVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// What an embedding provider sees of one face.
pub struct FaceCrop<'a> {
    pub image_id: &'a str,
    pub face: &'a FaceObservation,
    /// Decoded colour image, when the provider needs pixels.
    pub image: Option<&'a image::RgbImage>,
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, crop: &FaceCrop<'_>) -> Result<Embedding, ProviderError>;

    /// Whether [`FaceCrop::image`] must be populated.
    fn needs_pixels(&self) -> bool {
        false
    }
}

/// Deterministic pseudo-embedding: 512 standard normals drawn from a
/// ChaCha8 stream seeded by `SHA-256("facegate/stub-embedding/v1" || seed_le || key)`.
pub fn stub_vector(key: &str, seed: u64) -> Vec<f64> {
    let digest = Sha256::new()
        .chain_update(b"facegate/stub-embedding/v1")
        .chain_update(seed.to_le_bytes())
        .chain_update(key.as_bytes())
        .finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    (0..EMBEDDING_DIM).map(|_| rng.sample(StandardNormal)).collect()
}

/// Test provider: a pure function of `(image_id, face_id, seed)`.
#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    pub seed: u64,
}

impl StubEmbedder {
    pub fn key(image_id: &str, face_id: &str) -> String {
        format!("{image_id}\u{0}{face_id}")
    }
}

impl EmbeddingProvider for StubEmbedder {
    fn embed(&self, crop: &FaceCrop<'_>) -> Result<Embedding, ProviderError> {
        let key = Self::key(crop.image_id, &crop.face.face_id);
        Embedding::new(stub_vector(&key, self.seed), EmbeddingSource::Stub)
    }
}

pub type EmbeddingTable = HashMap<(String, String), Embedding>;

/// Looks embeddings up in a precomputed table.
#[derive(Debug, Clone, Default)]
pub struct SidecarEmbedder {
    table: EmbeddingTable,
}

impl SidecarEmbedder {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }
}

impl EmbeddingProvider for SidecarEmbedder {
    fn embed(&self, crop: &FaceCrop<'_>) -> Result<Embedding, ProviderError> {
        self.table
            .get(&(crop.image_id.to_string(), crop.face.face_id.clone()))
            .cloned()
            .ok_or_else(|| ProviderError::MissingEmbedding {
                image_id: crop.image_id.to_string(),
                face_id: crop.face.face_id.clone(),
            })
    }
}
