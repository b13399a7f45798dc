use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::classifier::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaceVerification {
    ContainsFace,
    NoFace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManipulationVerification {
    Manipulated,
    NotManipulated,
}

/// Inferred reason for a manipulation. Declaration order is display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intention {
    Privacy,
    Beauty,
    Humor,
    Information,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    WholeBody,
    WholeFace,
    Eye,
    Nose,
    Mouth,
    Ear,
    Others,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Blur,
    Pixel,
    Mask,
    Distort,
}

impl Intention {
    pub fn display(self) -> &'static str {
        match self {
            Intention::Privacy => "Privacy",
            Intention::Beauty => "Beauty",
            Intention::Humor => "Humor",
            Intention::Information => "Information",
            Intention::Unknown => "Unknown",
        }
    }
}

impl Part {
    pub fn display(self) -> &'static str {
        match self {
            Part::WholeBody => "body",
            Part::WholeFace => "face",
            Part::Eye => "eye",
            Part::Nose => "nose",
            Part::Mouth => "mouth",
            Part::Ear => "ear",
            Part::Others => "others",
        }
    }

    /// Parts whose manipulation counts as (at least partial) anonymization.
    pub fn is_key(self) -> bool {
        matches!(self, Part::WholeBody | Part::WholeFace | Part::Eye | Part::Nose | Part::Mouth)
    }
}

impl Method {
    pub fn display(self) -> &'static str {
        match self {
            Method::Blur => "blur",
            Method::Pixel => "pixel",
            Method::Mask => "mask",
            Method::Distort => "distort",
        }
    }
}

fn capitalise(s: String) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => s,
    }
}

/// "Privacy & Beauty"
pub fn intention_label(set: &BTreeSet<Intention>) -> String {
    set.iter().map(|i| i.display()).collect::<Vec<_>>().join(" & ")
}

/// "Eye, nose, mouth"
pub fn parts_label(set: &BTreeSet<Part>) -> String {
    capitalise(set.iter().map(|p| p.display()).collect::<Vec<_>>().join(", "))
}

/// "Blur & mask"
pub fn methods_label(set: &BTreeSet<Method>) -> String {
    capitalise(set.iter().map(|m| m.display()).collect::<Vec<_>>().join(" & "))
}

/// One annotator's coding of one image region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManipulationCoding {
    pub face_verification: FaceVerification,
    pub manipulation_verification: ManipulationVerification,
    pub intentions: BTreeSet<Intention>,
    #[serde(default)]
    pub parts: BTreeSet<Part>,
    #[serde(default)]
    pub methods: BTreeSet<Method>,
}

/// A violated coding rule, keyed by the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ManipulationCoding {
    pub fn is_manipulated(&self) -> bool {
        self.face_verification == FaceVerification::ContainsFace
            && self.manipulation_verification == ManipulationVerification::Manipulated
    }

    pub fn validate(&self) -> Result<(), Vec<FieldError>> {
        let mut errs = Vec::new();
        if self.intentions.is_empty() {
            errs.push(FieldError { field: "intentions".into(), message: "at least one intention is required".into() });
        }
        if self.intentions.contains(&Intention::Unknown) && self.intentions.len() > 1 {
            errs.push(FieldError { field: "intentions".into(),
                message: "unknown cannot be combined with other intentions".into(),
            });
        }
        if self.manipulation_verification == ManipulationVerification::NotManipulated {
            if !self.parts.is_empty() {
                errs.push(FieldError { field: "parts".into(), message: "must be empty when not manipulated".into() });
            }
            if !self.methods.is_empty() {
                errs.push(FieldError { field: "methods".into(), message: "must be empty when not manipulated".into() });
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub region_id: String,
    pub annotator_id: String,
    pub coding: ManipulationCoding,
    /// The annotator's subject/bystander call for the person in the region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsensusStatus {
    Resolved,
    Escalated,
}

/// Per-field majority outcome; `None` marks a field without a strict
/// majority. Intentions always resolve, falling back to `{unknown}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedFields {
    pub face_verification: Option<FaceVerification>,
    pub manipulation_verification: Option<ManipulationVerification>,
    pub intentions: BTreeSet<Intention>,
    pub parts: Option<BTreeSet<Part>>,
    pub methods: Option<BTreeSet<Method>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consensus {
    pub status: ConsensusStatus,
    /// Present when every field other than intention reached a majority.
    pub coding: Option<ManipulationCoding>,
    pub fields: ResolvedFields,
    /// Names of fields without a majority, in coding order.
    pub unresolved: Vec<String>,
    /// Bystander only with a strict majority of bystander calls.
    pub person_label: Option<Label>,
    pub records: usize,
}

fn majority<T: Ord + Clone>(values: impl Iterator<Item = T>, needed: usize) -> Option<T> {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    counts.into_iter().find(|&(_, c)| c >= needed).map(|(v, _)| v)
}

/// Resolves the codings of one region by strict majority over
/// `n_annotators` (at least `n/2 + 1` matching votes per field; sets compare
/// as whole sets).
pub fn consensus(records: &[AnnotationRecord], n_annotators: usize) -> Result<Consensus, AuditError> {
    if records.is_empty() {
        return Err(AuditError::EmptyInput);
    }
    let needed = n_annotators.max(records.len()) / 2 + 1;
    let codings = || records.iter().map(|r| &r.coding);
    let face = majority(codings().map(|c| c.face_verification), needed);
    let manip = majority(codings().map(|c| c.manipulation_verification), needed);
    let intentions = majority(codings().map(|c| c.intentions.clone()), needed);
    let (parts, methods) = if manip == Some(ManipulationVerification::NotManipulated) {
        (Some(BTreeSet::new()), Some(BTreeSet::new()))
    } else {
        (
            majority(codings().map(|c| c.parts.clone()), needed),
            majority(codings().map(|c| c.methods.clone()), needed),
        )
    };

    let mut unresolved = Vec::new();
    for (name, ok) in [
        ("face_verification", face.is_some()),
        ("manipulation_verification", manip.is_some()),
        ("intentions", intentions.is_some()),
        ("parts", parts.is_some()),
        ("methods", methods.is_some()),
    ] {
        if !ok {
            unresolved.push(name.to_string());
        }
    }
    let intentions = intentions.unwrap_or_else(|| BTreeSet::from([Intention::Unknown]));
    let coding = match (face, manip, &parts, &methods) {
        (Some(f), Some(m), Some(p), Some(me)) => Some(ManipulationCoding {
            face_verification: f,
            manipulation_verification: m,
            intentions: intentions.clone(),
            parts: p.clone(),
            methods: me.clone(),
        }),
        _ => None,
    };
    let labels: Vec<Label> = records.iter().filter_map(|r| r.person_label).collect();
    let person_label = if labels.is_empty() {
        None
    } else if labels.iter().filter(|&&l| l == Label::Bystander).count() >= needed {
        Some(Label::Bystander)
    } else {
        Some(Label::Subject)
    };
    Ok(Consensus {
        status: if unresolved.is_empty() { ConsensusStatus::Resolved } else { ConsensusStatus::Escalated },
        coding,
        fields: ResolvedFields {
            face_verification: face,
            manipulation_verification: manip,
            intentions,
            parts,
            methods,
        },
        unresolved,
        person_label,
        records: records.len(),
    })
}
