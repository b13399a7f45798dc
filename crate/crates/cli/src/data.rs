//! Turning feature, label and embedding files into classifier examples.

use std::collections::HashMap;
use std::path::Path;

use facegate::classifier::{Label, LabeledExample};
use facegate::features::{assemble_feature_vector, FeatureMask};
use facegate::providers::{load_embeddings, load_features, load_labels, EmbeddingTable, FaceKey, FeatureRecord};

use crate::error::{data, CliError, CliResult};

pub struct Inputs {
    pub features: Vec<FeatureRecord>,
    pub embeddings: EmbeddingTable,
}

impl Inputs {
    pub fn load(features: &Path, embeddings: Option<&Path>, mask: FeatureMask) -> CliResult<Self> {
        if mask.needs_embedding() && embeddings.is_none() {
            return Err(CliError::Config(format!("mask {mask} needs --embeddings")));
        }
        Ok(Self {
            features: load_features(features)?,
            embeddings: match embeddings {
                Some(p) if mask.needs_embedding() => load_embeddings(p)?,
                _ => EmbeddingTable::new(),
            },
        })
    }

    /// Examples in feature-file order. With `labels` absent every example is
    /// labelled Subject; callers that predict ignore the label.
    pub fn examples(&self, labels: Option<&HashMap<FaceKey, Label>>, mask: FeatureMask) -> CliResult<Vec<LabeledExample>> {
        self.features
            .iter()
            .map(|r| {
                let key = (r.image_id.clone(), r.face_id.clone());
                let label = match labels {
                    Some(l) => *l
                        .get(&key)
                        .ok_or_else(|| data(format!("no label for face {} of image {}", r.face_id, r.image_id)))?,
                    None => Label::Subject,
                };
                let embedding = if mask.needs_embedding() {
                    Some(self.embeddings.get(&key).ok_or_else(|| {
                        data(format!("no embedding for face {} of image {}", r.face_id, r.image_id))
                    })?)
                } else {
                    None
                };
                Ok(LabeledExample {
                    features: assemble_feature_vector(&r.handcrafted, embedding, mask)?,
                    label,
                    face_id: r.face_id.clone(),
                    image_id: r.image_id.clone(),
                })
            })
            .collect()
    }
}

pub fn labels(path: &Path) -> CliResult<HashMap<FaceKey, Label>> {
    Ok(load_labels(path)?)
}

pub fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}
