use std::fmt;

use serde::{Deserialize, Serialize};

use super::coding::ManipulationCoding;
use super::AuditError;
use crate::classifier::Label;
use crate::providers::{cosine_similarity, Embedding};

/// Default cosine threshold for matching a face to the uploader's profile.
pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaceClass {
    /// Unmanipulated.
    A,
    /// Manipulated but still detectable.
    B,
    /// Manipulated beyond detection.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnonymizationLevel {
    None,
    Partial,
    Full,
}

impl AnonymizationLevel {
    pub const ALL: [AnonymizationLevel; 3] = [Self::None, Self::Partial, Self::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Partial => "partial",
            Self::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonCategory {
    Uploader,
    Friend,
    /// A bystander who is not the uploader.
    BystanderStar,
}

impl PersonCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uploader => "uploader",
            Self::Friend => "friend",
            Self::BystanderStar => "bystander*",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PrivacyClass {
    /// Identifiable, potential leakage.
    One = 1,
    /// Insufficiently anonymized.
    Two = 2,
    /// Fully anonymized.
    Three = 3,
}

impl TryFrom<u8> for PrivacyClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            3 => Ok(Self::Three),
            other => Err(format!("privacy class must be 1, 2 or 3, got {other}")),
        }
    }
}

impl From<PrivacyClass> for u8 {
    fn from(c: PrivacyClass) -> u8 {
        c as u8
    }
}

pub fn face_class(detected: bool, manipulated: bool) -> Result<FaceClass, AuditError> {
    match (detected, manipulated) {
        (true, false) => Ok(FaceClass::A),
        (true, true) => Ok(FaceClass::B),
        (false, true) => Ok(FaceClass::C),
        (false, false) => Err(AuditError::NotAFace),
    }
}

/// `coding` is the consensus coding of the face's region, if it has one.
pub fn anonymization_level(
    class: FaceClass,
    coding: Option<&ManipulationCoding>,
) -> Result<AnonymizationLevel, AuditError> {
    let manipulated = coding.is_some_and(|c| c.is_manipulated());
    match class {
        FaceClass::A if manipulated => Err(AuditError::InconsistentCoding(
            "class A face with a manipulated coding".into(),
        )),
        FaceClass::A => Ok(AnonymizationLevel::None),
        FaceClass::C => Ok(AnonymizationLevel::Full),
        FaceClass::B => match coding {
            Some(c) if manipulated => Ok(if c.parts.iter().any(|p| p.is_key()) {
                AnonymizationLevel::Partial
            } else {
                AnonymizationLevel::None
            }),
            _ => Err(AuditError::InconsistentCoding(
                "class B face without a manipulated coding".into(),
            )),
        },
    }
}

/// True iff the best cosine similarity against the profile faces reaches
/// `threshold`.
pub fn match_uploader(face: &Embedding, profile: &[Embedding], threshold: f64) -> Result<bool, AuditError> {
    let mut best = f64::NEG_INFINITY;
    for p in profile {
        best = best.max(cosine_similarity(face, p).map_err(|_| AuditError::DegenerateVector)?);
    }
    Ok(best >= threshold)
}

pub fn categorize_person(label: Label, uploader_match: bool) -> PersonCategory {
    match (uploader_match, label) {
        (true, _) => PersonCategory::Uploader,
        (false, Label::Subject) => PersonCategory::Friend,
        (false, Label::Bystander) => PersonCategory::BystanderStar,
    }
}

/// `None` for the uploader's own unanonymized faces, which are not a leak.
pub fn privacy_class(category: PersonCategory, level: AnonymizationLevel) -> Option<PrivacyClass> {
    match (category, level) {
        (PersonCategory::Uploader, AnonymizationLevel::None) => None,
        (_, AnonymizationLevel::None) => Some(PrivacyClass::One),
        (_, AnonymizationLevel::Partial) => Some(PrivacyClass::Two),
        (_, AnonymizationLevel::Full) => Some(PrivacyClass::Three),
    }
}

/// Presence bits (non-anonymized, partial, full) for one person category in
/// one image or uploader.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TripleCode {
    pub none: bool,
    pub partial: bool,
    pub full: bool,
}

impl TripleCode {
    /// `None` when there are no faces.
    pub fn encode(levels: impl IntoIterator<Item = AnonymizationLevel>) -> Option<Self> {
        let mut code = Self::default();
        let mut any = false;
        for l in levels {
            code.insert(l);
            any = true;
        }
        any.then_some(code)
    }

    pub fn insert(&mut self, level: AnonymizationLevel) {
        match level {
            AnonymizationLevel::None => self.none = true,
            AnonymizationLevel::Partial => self.partial = true,
            AnonymizationLevel::Full => self.full = true,
        }
    }

    pub fn union(self, other: Self) -> Self {
        Self {
            none: self.none || other.none,
            partial: self.partial || other.partial,
            full: self.full || other.full,
        }
    }

    pub fn bits(self) -> u8 {
        (self.none as u8) << 2 | (self.partial as u8) << 1 | self.full as u8
    }
}

impl fmt::Display for TripleCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.none as u8, self.partial as u8, self.full as u8)
    }
}

impl Serialize for TripleCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TripleCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let b = s.as_bytes();
        if b.len() != 3 || b.iter().any(|c| !matches!(c, b'0' | b'1')) || s == "000" {
            return Err(serde::de::Error::custom(format!("invalid code {s:?}")));
        }
        Ok(Self { none: b[0] == b'1', partial: b[1] == b'1', full: b[2] == b'1' })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::coding::tests::coding;
    use crate::audit::coding::{Intention, Part};
    use crate::providers::{EmbeddingSource, EMBEDDING_DIM};
    use proptest::prelude::*;

    fn emb(values: &[f64]) -> Embedding {
        let mut v = vec![0.0; EMBEDDING_DIM];
        v[..values.len()].copy_from_slice(values);
        Embedding::new(v, EmbeddingSource::Sidecar).unwrap()
    }

    #[test]
    fn face_classes() {
        assert_eq!(face_class(true, false), Ok(FaceClass::A));
        assert_eq!(face_class(true, true), Ok(FaceClass::B));
        assert_eq!(face_class(false, true), Ok(FaceClass::C));
        assert_eq!(face_class(false, false), Err(AuditError::NotAFace));
    }

    #[test]
    fn levels_follow_key_parts() {
        let eye = coding(&[Intention::Privacy], &[Part::Eye], &[]);
        let ear = coding(&[Intention::Beauty], &[Part::Ear], &[]);
        let others = coding(&[Intention::Beauty], &[Part::Ear, Part::Others], &[]);
        assert_eq!(anonymization_level(FaceClass::B, Some(&eye)), Ok(AnonymizationLevel::Partial));
        assert_eq!(anonymization_level(FaceClass::B, Some(&ear)), Ok(AnonymizationLevel::None));
        assert_eq!(anonymization_level(FaceClass::B, Some(&others)), Ok(AnonymizationLevel::None));
        assert_eq!(anonymization_level(FaceClass::C, Some(&ear)), Ok(AnonymizationLevel::Full));
        assert_eq!(anonymization_level(FaceClass::C, None), Ok(AnonymizationLevel::Full));
        assert_eq!(anonymization_level(FaceClass::A, None), Ok(AnonymizationLevel::None));
        assert!(matches!(anonymization_level(FaceClass::A, Some(&eye)), Err(AuditError::InconsistentCoding(_))));
        assert!(matches!(anonymization_level(FaceClass::B, None), Err(AuditError::InconsistentCoding(_))));
    }

    #[test]
    fn uploader_matching_threshold() {
        let a = emb(&[1.0, 0.0]);
        assert!(match_uploader(&a, std::slice::from_ref(&a), 1.0).unwrap());
        assert!(!match_uploader(&a, &[], 0.0).unwrap());
        // cos = 0.59 exactly against the unit x axis.
        let b = emb(&[0.59, (1.0f64 - 0.59 * 0.59).sqrt()]);
        assert!(!match_uploader(&a, std::slice::from_ref(&b), 0.6).unwrap());
        assert!(match_uploader(&a, &[b, a.clone()], 0.6).unwrap());
        assert_eq!(match_uploader(&a, &[emb(&[])], 0.6), Err(AuditError::DegenerateVector));
    }

    #[test]
    fn categories_and_privacy_classes() {
        assert_eq!(categorize_person(Label::Subject, true), PersonCategory::Uploader);
        assert_eq!(categorize_person(Label::Bystander, true), PersonCategory::Uploader);
        assert_eq!(categorize_person(Label::Subject, false), PersonCategory::Friend);
        assert_eq!(categorize_person(Label::Bystander, false), PersonCategory::BystanderStar);
        use AnonymizationLevel as L;
        use PersonCategory as P;
        assert_eq!(privacy_class(P::Friend, L::None), Some(PrivacyClass::One));
        assert_eq!(privacy_class(P::BystanderStar, L::Partial), Some(PrivacyClass::Two));
        assert_eq!(privacy_class(P::Friend, L::Full), Some(PrivacyClass::Three));
        assert_eq!(privacy_class(P::Uploader, L::None), None);
        for p in [P::Uploader, P::Friend, P::BystanderStar] {
            assert_eq!(privacy_class(p, L::Full), Some(PrivacyClass::Three));
        }
    }

    #[test]
    fn triple_codes() {
        use AnonymizationLevel as L;
        assert_eq!(TripleCode::encode([L::None, L::None]).unwrap().to_string(), "100");
        assert_eq!(TripleCode::encode([L::None, L::Full]).unwrap().to_string(), "101");
        assert_eq!(TripleCode::encode([]), None);
        let c = TripleCode::encode([L::Partial]).unwrap();
        assert_eq!(serde_json::to_string(&c).unwrap(), "\"010\"");
        assert_eq!(serde_json::from_str::<TripleCode>("\"010\"").unwrap(), c);
        assert!(serde_json::from_str::<TripleCode>("\"000\"").is_err());
    }

    fn arb_level() -> impl Strategy<Value = AnonymizationLevel> {
        prop_oneof![Just(AnonymizationLevel::None), Just(AnonymizationLevel::Partial), Just(AnonymizationLevel::Full)]
    }

    proptest! {
        #[test]
        fn encoding_is_monotone(levels in prop::collection::vec(arb_level(), 1..8), extra in arb_level()) {
            let before = TripleCode::encode(levels.iter().copied()).unwrap();
            let after = TripleCode::encode(levels.iter().copied().chain([extra])).unwrap();
            prop_assert_eq!(before.bits() & after.bits(), before.bits());
            prop_assert!(after.bits() != 0);
        }
    }
}
