use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProviderError, SCHEMA_VERSION};
use crate::classifier::Label;
use crate::features::HandcraftedFeatures;
use crate::records;

pub const LABELS_SCHEMA: &str = "facegate.labels";
pub const FEATURES_SCHEMA: &str = "facegate.features";
pub const PREDICTIONS_SCHEMA: &str = "facegate.predictions";

pub type FaceKey = (String, String);

/// Ground-truth role of one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image_id: String,
    pub face_id: String,
    pub label: Label,
}

/// Handcrafted features of one face as written by feature extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub image_id: String,
    pub face_id: String,
    pub handcrafted: HandcraftedFeatures,
}

/// Classifier output for one face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub image_id: String,
    pub face_id: String,
    pub label: Label,
    pub bystander_probability: f64,
}

fn keyed<T, F>(path: &Path, schema: &str, key: F) -> Result<HashMap<FaceKey, T>, ProviderError>
where
    T: serde::de::DeserializeOwned,
    F: Fn(&T) -> FaceKey,
{
    let lines = records::read_records::<T>(path, schema, SCHEMA_VERSION)?;
    let mut out = HashMap::with_capacity(lines.len());
    for l in lines {
        let k = key(&l.value);
        if out.contains_key(&k) {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: format!("{}/{}", k.0, k.1),
            });
        }
        out.insert(k, l.value);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<HashMap<FaceKey, Label>, ProviderError> {
    let m = keyed::<LabelRecord, _>(path, LABELS_SCHEMA, |r| (r.image_id.clone(), r.face_id.clone()))?;
    Ok(m.into_iter().map(|(k, r)| (k, r.label)).collect())
}

pub fn write_labels(path: &Path, records: &[LabelRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, LABELS_SCHEMA, SCHEMA_VERSION, records)?)
}

pub fn load_features(path: &Path) -> Result<Vec<FeatureRecord>, ProviderError> {
    let lines = records::read_records::<FeatureRecord>(path, FEATURES_SCHEMA, SCHEMA_VERSION)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(lines.len());
    for l in lines {
        let r = l.value;
        if let Err(message) = r.handcrafted.check() {
            return Err(ProviderError::Validation {
                path: path.to_path_buf(),
                line: l.line,
                record: format!("{}/{}", r.image_id, r.face_id),
                message,
            });
        }
        if !seen.insert((r.image_id.clone(), r.face_id.clone())) {
            return Err(ProviderError::DuplicateId {
                path: path.to_path_buf(),
                line: l.line,
                id: format!("{}/{}", r.image_id, r.face_id),
            });
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_features(path: &Path, records: &[FeatureRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, FEATURES_SCHEMA, SCHEMA_VERSION, records)?)
}

pub fn load_predictions(path: &Path) -> Result<HashMap<FaceKey, PredictionRecord>, ProviderError> {
    keyed::<PredictionRecord, _>(path, PREDICTIONS_SCHEMA, |r| (r.image_id.clone(), r.face_id.clone()))
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), ProviderError> {
    Ok(records::write_records(path, PREDICTIONS_SCHEMA, SCHEMA_VERSION, records)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.jsonl");
        let recs = vec![
            LabelRecord { image_id: "a".into(), face_id: "f1".into(), label: Label::Subject },
            LabelRecord { image_id: "a".into(), face_id: "f2".into(), label: Label::Bystander },
        ];
        write_labels(&p, &recs).unwrap();
        let m = load_labels(&p).unwrap();
        assert_eq!(m[&("a".to_string(), "f2".to_string())], Label::Bystander);
        write_labels(&p, &[recs[0].clone(), recs[0].clone()]).unwrap();
        assert!(matches!(load_labels(&p), Err(ProviderError::DuplicateId { line: 3, .. })));
    }
}
