use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use super::coding::{consensus, ManipulationCoding};
use super::journal::{current_records, load_consensus, read_journal, resolved_codings};
use super::pipeline::AuditInput;
use super::AuditError;
use crate::classifier::Label;
use crate::providers::{
    load_embeddings, load_face_sidecar, load_labels, load_manifest, load_manipulation_regions, load_predictions,
    load_profiles, Embedding, EmbeddingTable, FaceKey, FaceSidecar, Manifest, ManipulationRegion, ProviderError,
};
use crate::records::RecordError;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CodingSource {
    /// Raw annotation journal, resolved here by majority over `annotators`.
    Journal { path: PathBuf, annotators: usize },
    /// Consensus export from the annotation service.
    Consensus(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    Labels(PathBuf),
    Predictions(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditPaths {
    pub manifest: PathBuf,
    pub faces: Vec<PathBuf>,
    pub regions: Option<PathBuf>,
    pub codings: Option<CodingSource>,
    pub labels: LabelSource,
    pub embeddings: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
}

/// Every audit input, loaded and validated.
pub struct LoadedAudit {
    pub manifest: Manifest,
    pub faces: Vec<FaceSidecar>,
    pub regions: Vec<ManipulationRegion>,
    pub codings: HashMap<(String, String), ManipulationCoding>,
    pub labels: HashMap<FaceKey, Label>,
    pub embeddings: EmbeddingTable,
    pub profiles: HashMap<String, Vec<Embedding>>,
    /// Regions whose annotations did not settle every coding field.
    pub unresolved_regions: Vec<(String, String)>,
}

impl LoadedAudit {
    pub fn load(paths: &AuditPaths) -> Result<Self, LoadError> {
        let manifest = load_manifest(&paths.manifest)?;
        let mut faces = Vec::new();
        for p in &paths.faces {
            faces.extend(load_face_sidecar(p, &manifest)?);
        }
        let regions = match &paths.regions {
            Some(p) => load_manipulation_regions(p, &manifest)?,
            None => Vec::new(),
        };
        let mut unresolved_regions = Vec::new();
        let codings = match &paths.codings {
            None => HashMap::new(),
            Some(CodingSource::Consensus(p)) => {
                let recs = load_consensus(p)?;
                let codings = resolved_codings(&recs);
                for r in &recs {
                    let key = (r.image_id.clone(), r.region_id.clone());
                    if !codings.contains_key(&key) {
                        unresolved_regions.push(key);
                    }
                }
                codings
            }
            Some(CodingSource::Journal { path, annotators }) => {
                let replay = read_journal(path)?;
                let mut out = HashMap::new();
                for records in current_records(&replay.entries).into_values() {
                    let records: Vec<_> = records.into_values().collect();
                    let key = (records[0].image_id.clone(), records[0].region_id.clone());
                    match consensus(&records, *annotators)?.coding {
                        Some(c) => {
                            out.insert(key, c);
                        }
                        None => unresolved_regions.push(key),
                    }
                }
                out
            }
        };
        let labels = match &paths.labels {
            LabelSource::Labels(p) => load_labels(p)?,
            LabelSource::Predictions(p) => load_predictions(p)?.into_iter().map(|(k, r)| (k, r.label)).collect(),
        };
        let embeddings = match &paths.embeddings {
            Some(p) => load_embeddings(p)?,
            None => EmbeddingTable::new(),
        };
        let profiles = match &paths.profiles {
            Some(p) => load_profiles(p)?,
            None => HashMap::new(),
        };
        unresolved_regions.sort();
        Ok(Self { manifest, faces, regions, codings, labels, embeddings, profiles, unresolved_regions })
    }

    pub fn input(&self) -> AuditInput<'_> {
        AuditInput {
            manifest: &self.manifest,
            faces: &self.faces,
            regions: &self.regions,
            codings: &self.codings,
            labels: &self.labels,
            embeddings: &self.embeddings,
            profiles: &self.profiles,
        }
    }
}
