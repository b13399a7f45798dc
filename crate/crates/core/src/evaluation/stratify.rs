use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{metrics, ConfusionMatrix, MetricsReport};
use crate::classifier::Label;

/// Images bucketed by their ground-truth subject count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubjectCountGroup {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "5")]
    Five,
    #[serde(rename = "6-10")]
    SixToTen,
    #[serde(rename = ">10")]
    MoreThanTen,
}

impl SubjectCountGroup {
    pub const ALL: [SubjectCountGroup; 7] = [
        SubjectCountGroup::One,
        SubjectCountGroup::Two,
        SubjectCountGroup::Three,
        SubjectCountGroup::Four,
        SubjectCountGroup::Five,
        SubjectCountGroup::SixToTen,
        SubjectCountGroup::MoreThanTen,
    ];

    /// `None` for zero subjects.
    pub fn from_count(subjects: usize) -> Option<Self> {
        Some(match subjects {
            0 => return None,
            1 => Self::One,
            2 => Self::Two,
            3 => Self::Three,
            4 => Self::Four,
            5 => Self::Five,
            6..=10 => Self::SixToTen,
            _ => Self::MoreThanTen,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::One => "1",
            Self::Two => "2",
            Self::Three => "3",
            Self::Four => "4",
            Self::Five => "5",
            Self::SixToTen => "6-10",
            Self::MoreThanTen => ">10",
        }
    }
}

impl fmt::Display for SubjectCountGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceOutcome {
    pub image_id: String,
    pub truth: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: SubjectCountGroup,
    pub images: usize,
    pub faces: usize,
    pub confusion: ConfusionMatrix,
    /// `None` when the group holds no images.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratifiedReport {
    /// All seven groups in ascending order.
    pub groups: Vec<GroupReport>,
    /// Images left out because they have no ground-truth subject.
    pub excluded: Vec<String>,
}

pub fn stratify_by_subject_count(faces: &[FaceOutcome]) -> StratifiedReport {
    let mut per_image: BTreeMap<&str, (usize, ConfusionMatrix)> = BTreeMap::new();
    for f in faces {
        let e = per_image.entry(&f.image_id).or_default();
        if f.truth == Label::Subject {
            e.0 += 1;
        }
        e.1.record(f.predicted, f.truth);
    }
    let mut groups: Vec<GroupReport> = SubjectCountGroup::ALL
        .iter()
        .map(|&group| GroupReport {
            group,
            images: 0,
            faces: 0,
            confusion: ConfusionMatrix::default(),
            metrics: None,
        })
        .collect();
    let mut excluded = Vec::new();
    for (image, (subjects, cm)) in per_image {
        match SubjectCountGroup::from_count(subjects) {
            Some(g) => {
                let r = &mut groups[g as usize];
                r.images += 1;
                r.faces += cm.total() as usize;
                r.confusion.merge(&cm);
            }
            None => excluded.push(image.to_string()),
        }
    }
    for r in &mut groups {
        r.metrics = metrics(&r.confusion).ok();
    }
    StratifiedReport { groups, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Bystander as B, Subject as S};

    fn faces(image: &str, truth: &[Label]) -> Vec<FaceOutcome> {
        truth
            .iter()
            .map(|&t| FaceOutcome { image_id: image.into(), truth: t, predicted: t })
            .collect()
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(SubjectCountGroup::from_count(0), None);
        assert_eq!(SubjectCountGroup::from_count(5), Some(SubjectCountGroup::Five));
        assert_eq!(SubjectCountGroup::from_count(6), Some(SubjectCountGroup::SixToTen));
        assert_eq!(SubjectCountGroup::from_count(7), Some(SubjectCountGroup::SixToTen));
        assert_eq!(SubjectCountGroup::from_count(10), Some(SubjectCountGroup::SixToTen));
        assert_eq!(SubjectCountGroup::from_count(11), Some(SubjectCountGroup::MoreThanTen));
        for n in 1..200 {
            assert!(SubjectCountGroup::from_count(n).is_some());
        }
    }

    #[test]
    fn buckets_by_subjects_only() {
        let mut all = faces("a", &[S, B, B, B]);
        all.extend(faces("b", &[S; 7]));
        all.extend(faces("c", &[B, B]));
        let r = stratify_by_subject_count(&all);
        assert_eq!(r.groups[0].images, 1);
        assert_eq!(r.groups[0].faces, 4);
        assert_eq!(r.groups[5].images, 1);
        assert_eq!(r.excluded, vec!["c".to_string()]);
        assert!(r.groups[1].metrics.is_none());
        assert_eq!(r.groups[0].metrics.unwrap().accuracy, Some(1.0));
    }
}
