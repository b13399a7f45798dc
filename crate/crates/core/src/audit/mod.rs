//! Face-privacy auditing: anonymization rules, person categories, annotation
//! consensus and corpus aggregation.

pub mod coding;
pub mod inputs;
pub mod journal;
pub mod pipeline;
pub mod render;
pub mod report;
pub mod rules;

use thiserror::Error;

pub use coding::{
    consensus, AnnotationRecord, Consensus, ConsensusStatus, FaceVerification, FieldError, Intention,
    ManipulationCoding, ManipulationVerification, Method, Part,
};
pub use inputs::{AuditPaths, CodingSource, LabelSource, LoadError, LoadedAudit};
pub use pipeline::{audit_faces, AuditConfig, AuditInput, AuditedCorpus, AuditedFace};
pub use report::{aggregate, chi_square, conservation_violations, AuditReport};
pub use rules::{
    anonymization_level, categorize_person, face_class, match_uploader, privacy_class, AnonymizationLevel,
    FaceClass, PersonCategory, PrivacyClass, TripleCode, DEFAULT_MATCH_THRESHOLD,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("no records")]
    EmptyInput,
    #[error("undetected face without a manipulated coding")]
    NotAFace,
    #[error("inconsistent coding: {0}")]
    InconsistentCoding(String),
    #[error("zero-norm embedding")]
    DegenerateVector,
    #[error("face {face_id} of image {image_id} has no {missing}")]
    IncompleteFace { image_id: String, face_id: String, missing: &'static str },
}

/// Runs the face pipeline and aggregates the result.
pub fn run_audit(input: &AuditInput<'_>, config: &AuditConfig) -> Result<AuditReport, AuditError> {
    let corpus = audit_faces(input, config)?;
    Ok(aggregate(&corpus, config))
}
