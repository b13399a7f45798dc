use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::coding::{Intention, ManipulationCoding, Method, Part};
use super::rules::{
    anonymization_level, categorize_person, face_class, match_uploader, privacy_class, AnonymizationLevel,
    FaceClass, PersonCategory, PrivacyClass, DEFAULT_MATCH_THRESHOLD,
};
use super::AuditError;
use crate::classifier::Label;
use crate::features::FaceObservation;
use crate::providers::{Embedding, EmbeddingTable, FaceKey, FaceSidecar, Manifest, ManipulationRegion, ProfileType};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    /// Cosine threshold for profile matching and for merging repeated faces.
    pub match_threshold: f64,
    /// Minimum share of a face box a region must cover to link to it.
    pub link_overlap: f64,
    /// Continuity correction for 2x2 chi-square tests.
    pub yates: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self { match_threshold: DEFAULT_MATCH_THRESHOLD, link_overlap: 0.5, yates: false }
    }
}

pub struct AuditInput<'a> {
    pub manifest: &'a Manifest,
    pub faces: &'a [FaceSidecar],
    pub regions: &'a [ManipulationRegion],
    /// Consensus codings keyed by `(image_id, region_id)`.
    pub codings: &'a HashMap<(String, String), ManipulationCoding>,
    pub labels: &'a HashMap<FaceKey, Label>,
    pub embeddings: &'a EmbeddingTable,
    pub profiles: &'a HashMap<String, Vec<Embedding>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditedFace {
    pub image_id: String,
    pub face_id: String,
    pub uploader_id: String,
    pub detected: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_id: Option<String>,
    pub class: FaceClass,
    pub level: AnonymizationLevel,
    pub label: Label,
    pub uploader_match: bool,
    pub category: PersonCategory,
    pub privacy_class: Option<PrivacyClass>,
    /// Coding details; empty for unmanipulated faces.
    #[serde(default)]
    pub intentions: BTreeSet<Intention>,
    #[serde(default)]
    pub parts: BTreeSet<Part>,
    #[serde(default)]
    pub methods: BTreeSet<Method>,
    #[serde(skip)]
    pub embedding: Option<Embedding>,
}

impl AuditedFace {
    pub fn manipulated(&self) -> bool {
        self.class != FaceClass::A
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditedImage {
    pub image_id: String,
    pub uploader_id: String,
    pub verified_account: Option<bool>,
    pub profile_type: Option<ProfileType>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditedCorpus {
    pub images_in: usize,
    pub celebrity_dropped: Vec<String>,
    pub images_without_faces: Vec<String>,
    /// Images with at least one audited face, in manifest order.
    pub images: Vec<AuditedImage>,
    pub faces: Vec<AuditedFace>,
    pub excluded_faces: Vec<FaceKey>,
    pub warnings: Vec<String>,
}

/// Uploader key for images whose manifest entry names none.
pub fn anonymous_uploader(image_id: &str) -> String {
    format!("(none):{image_id}")
}

fn linked_region<'r>(
    face: &FaceObservation,
    regions: &[&'r ManipulationRegion],
    coded: impl Fn(&ManipulationRegion) -> bool,
    min_share: f64,
) -> Option<&'r ManipulationRegion> {
    if let Some(r) = regions.iter().find(|r| r.face_id.as_deref() == Some(face.face_id.as_str())) {
        return Some(r);
    }
    let area = face.bbox.area() as f64;
    regions
        .iter()
        .filter(|r| r.face_id.is_none() && coded(r))
        .map(|r| (r, r.region.overlap_area(&face.bbox)))
        .filter(|&(_, o)| area > 0.0 && o as f64 >= min_share * area)
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.region_id.cmp(&a.0.region_id)))
        .map(|(r, _)| *r)
}

/// Classifies and categorizes every face of the non-celebrity images.
///
/// Undetected faces without a manipulated coding are excluded with a
/// warning; a face without a label is an error.
pub fn audit_faces(input: &AuditInput<'_>, config: &AuditConfig) -> Result<AuditedCorpus, AuditError> {
    let mut faces_by_image: HashMap<&str, Vec<&FaceObservation>> = HashMap::new();
    for s in input.faces {
        faces_by_image.entry(s.image_id.as_str()).or_default().extend(&s.faces);
    }
    let mut regions_by_image: HashMap<&str, Vec<&ManipulationRegion>> = HashMap::new();
    for r in input.regions {
        regions_by_image.entry(r.image_id.as_str()).or_default().push(r);
    }

    let mut out = AuditedCorpus { images_in: input.manifest.len(), ..Default::default() };
    for entry in input.manifest.entries() {
        let image_id = entry.image_id.as_str();
        if entry.celebrity_only == Some(true) {
            out.celebrity_dropped.push(entry.image_id.clone());
            continue;
        }
        let uploader_id = entry.uploader_id.clone().unwrap_or_else(|| anonymous_uploader(image_id));
        let regions = regions_by_image.get(image_id).map(Vec::as_slice).unwrap_or(&[]);
        let coding_of = |r: &ManipulationRegion| {
            input
                .codings
                .get(&(r.image_id.clone(), r.region_id.clone()))
                .filter(|c| c.face_verification == super::coding::FaceVerification::ContainsFace)
        };
        let profile = input.profiles.get(&uploader_id).map(Vec::as_slice).unwrap_or(&[]);
        let mut used_regions = HashSet::new();
        let mut kept = 0;
        for face in faces_by_image.get(image_id).map(Vec::as_slice).unwrap_or(&[]) {
            let key = (entry.image_id.clone(), face.face_id.clone());
            let region = linked_region(face, regions, |r| coding_of(r).is_some(), config.link_overlap);
            let coding = region.and_then(coding_of);
            let manipulated = coding.is_some_and(|c| c.is_manipulated());
            let class = match face_class(face.detected, manipulated) {
                Ok(c) => c,
                Err(AuditError::NotAFace) => {
                    out.warnings.push(format!(
                        "{image_id}/{}: undetected face without a manipulated coding, excluded",
                        face.face_id
                    ));
                    out.excluded_faces.push(key);
                    continue;
                }
                Err(e) => return Err(e),
            };
            if let Some(r) = region {
                used_regions.insert(r.region_id.as_str());
            }
            let level = anonymization_level(class, coding)?;
            let label = *input.labels.get(&key).ok_or_else(|| AuditError::IncompleteFace {
                image_id: key.0.clone(),
                face_id: key.1.clone(),
                missing: "label",
            })?;
            let embedding = input.embeddings.get(&key).cloned();
            let uploader_match = if entry.profile_type == Some(ProfileType::RealFace) && class != FaceClass::C {
                match &embedding {
                    Some(e) => match_uploader(e, profile, config.match_threshold)?,
                    None => {
                        out.warnings
                            .push(format!("{image_id}/{}: no embedding, not matched to the uploader", face.face_id));
                        false
                    }
                }
            } else {
                false
            };
            let category = categorize_person(label, uploader_match);
            let (intentions, parts, methods) = match coding {
                Some(c) if manipulated => (c.intentions.clone(), c.parts.clone(), c.methods.clone()),
                _ => Default::default(),
            };
            out.faces.push(AuditedFace {
                image_id: key.0,
                face_id: key.1,
                uploader_id: uploader_id.clone(),
                detected: face.detected,
                region_id: region.map(|r| r.region_id.clone()),
                class,
                level,
                label,
                uploader_match,
                category,
                privacy_class: privacy_class(category, level),
                intentions,
                parts,
                methods,
                embedding,
            });
            kept += 1;
        }
        for r in regions {
            if coding_of(r).is_some_and(|c| c.is_manipulated()) && !used_regions.contains(r.region_id.as_str()) {
                out.warnings.push(format!(
                    "{image_id}/{}: region coded as a manipulated face but no face is linked",
                    r.region_id
                ));
            }
        }
        if kept == 0 {
            out.images_without_faces.push(entry.image_id.clone());
        } else {
            out.images.push(AuditedImage {
                image_id: entry.image_id.clone(),
                uploader_id,
                verified_account: entry.verified_account,
                profile_type: entry.profile_type,
            });
        }
    }
    Ok(out)
}
