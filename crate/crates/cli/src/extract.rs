//! `features extract`: handcrafted features (and optionally embeddings) for
//! every face in a manifest.

use std::path::{Path, PathBuf};

use facegate::features::{extract_image_features, FaceObservation};
use facegate::imaging::to_grayscale;
use facegate::providers::{
    apply_detector_threshold, faces_by_image, load_face_sidecar, load_manifest, write_embeddings, write_features,
    EmbeddingProvider, EmbeddingRecord, FaceCrop, FeatureRecord, PoseResolver, PoseWarning, ProviderConfig,
    StubEmbedder,
};
use facegate::seed::derive_seed;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{data, CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct ExtractSummary {
    pub images: usize,
    pub images_without_faces: usize,
    pub faces: usize,
    pub embeddings: usize,
    pub pose_warnings: Vec<PoseWarning>,
}

struct ImageResult {
    features: Vec<FeatureRecord>,
    embeddings: Vec<EmbeddingRecord>,
    warnings: Vec<PoseWarning>,
}

#[cfg(feature = "onnx")]
fn model_providers(p: &ProviderConfig) -> CliResult<(PoseResolver, Option<Box<dyn EmbeddingProvider>>)> {
    use facegate::providers::onnx::{OnnxEmbedder, OnnxPose};
    let pose = match &p.pose_model {
        Some(path) => PoseResolver::with_model(Box::new(OnnxPose::load(path)?)),
        None => PoseResolver::sidecar_only(),
    };
    let embed = match &p.embed_model {
        Some(path) => Some(Box::new(OnnxEmbedder::load(path)?) as Box<dyn EmbeddingProvider>),
        None => None,
    };
    Ok((pose, embed))
}

#[cfg(not(feature = "onnx"))]
fn model_providers(p: &ProviderConfig) -> CliResult<(PoseResolver, Option<Box<dyn EmbeddingProvider>>)> {
    if p.pose_model.is_some() || p.embed_model.is_some() {
        return Err(CliError::Config("model providers need a build with the `onnx` feature".into()));
    }
    Ok((PoseResolver::sidecar_only(), None))
}

pub fn run(manifest: &Path, faces: &[PathBuf], stub_embeddings: bool, out: &Path, config: &RunConfig) -> CliResult<ExtractSummary> {
    if config.providers.detector_model.is_some() {
        return Err(CliError::Config("face detection models are not supported; supply face sidecars".into()));
    }
    let manifest = load_manifest(manifest)?;
    let mut sidecars = Vec::new();
    for p in faces {
        sidecars.extend(load_face_sidecar(p, &manifest)?);
    }
    if let Some(t) = config.providers.detector_threshold {
        apply_detector_threshold(&mut sidecars, t);
    }
    let (pose, model_embedder) = model_providers(&config.providers)?;
    let embedder: Option<Box<dyn EmbeddingProvider>> = if stub_embeddings {
        Some(Box::new(StubEmbedder { seed: derive_seed(config.seed, "embed/stub") }))
    } else {
        model_embedder
    };
    let by_image = faces_by_image(&sidecars);
    let entries: Vec<_> = manifest.entries().iter().filter(|e| by_image.contains_key(e.image_id.as_str())).collect();

    let results: Vec<ImageResult> = entries
        .par_iter()
        .map(|entry| {
            let mut faces: Vec<FaceObservation> = by_image[entry.image_id.as_str()].iter().map(|&f| f.clone()).collect();
            let path = manifest.image_path(entry);
            let rgb = image::open(&path).map_err(|e| data(format!("{}: {e}", path.display())))?.to_rgb8();
            if (rgb.width(), rgb.height()) != (entry.width, entry.height) {
                return Err(data(format!(
                    "{}: decoded size {}x{} differs from manifest {}x{}",
                    path.display(),
                    rgb.width(),
                    rgb.height(),
                    entry.width,
                    entry.height
                )));
            }
            let mut warnings = Vec::new();
            let mut embeddings = Vec::new();
            for i in 0..faces.len() {
                let crop = FaceCrop { image_id: &entry.image_id, face: &faces[i], image: Some(&rgb) };
                let resolved = pose.resolve(&crop)?;
                if let Some(e) = &embedder {
                    embeddings.push(EmbeddingRecord {
                        image_id: entry.image_id.clone(),
                        face_id: faces[i].face_id.clone(),
                        embedding: e.embed(&crop)?.into_values(),
                    });
                }
                warnings.extend(resolved.warning);
                faces[i].pose = Some(resolved.pose);
            }
            let gray = to_grayscale(&rgb)?;
            let features = extract_image_features(&gray, &faces)?
                .into_iter()
                .zip(&faces)
                .map(|(handcrafted, f)| FeatureRecord {
                    image_id: entry.image_id.clone(),
                    face_id: f.face_id.clone(),
                    handcrafted,
                })
                .collect();
            Ok(ImageResult { features, embeddings, warnings })
        })
        .collect::<CliResult<_>>()?;

    let features: Vec<FeatureRecord> = results.iter().flat_map(|r| r.features.iter().cloned()).collect();
    let embeddings: Vec<EmbeddingRecord> = results.iter().flat_map(|r| r.embeddings.iter().cloned()).collect();
    std::fs::create_dir_all(out)?;
    write_features(&out.join("features.jsonl"), &features)?;
    if embedder.is_some() {
        write_embeddings(&out.join("embeddings.jsonl"), &embeddings)?;
    }
    Ok(ExtractSummary {
        images: entries.len(),
        images_without_faces: manifest.len() - entries.len(),
        faces: features.len(),
        embeddings: embeddings.len(),
        pose_warnings: results.into_iter().flat_map(|r| r.warnings).collect(),
    })
}
