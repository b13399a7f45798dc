//! Bystander-positive metrics, image-grouped splits, subject-count
//! stratification, inter-annotator agreement and the synthetic corpus.

mod kappa;
mod split;
mod stratify;
pub mod synthetic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::Label;

pub use kappa::{
    category_counts, cohen_kappa, cohen_kappa_table, fleiss_kappa, scott_pi, Agreement,
};
pub use split::{k_fold, split_80_10_10, Fold, HoldoutSplit};
pub use stratify::{stratify_by_subject_count, FaceOutcome, GroupReport, StratifiedReport, SubjectCountGroup};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("length mismatch: {left} vs {right}")]
    ShapeMismatch { left: usize, right: usize },
    #[error("inconsistent rater count: item {item} has {got} ratings, expected {expected}")]
    RaterCount { item: usize, expected: u64, got: u64 },
    #[error("no examples")]
    EmptyInput,
    #[error("k = {k} is invalid for {images} images (need 2 <= k <= images)")]
    InvalidK { k: usize, images: usize },
}

/// Counts with the bystander class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted: Label, actual: Label) {
        match (predicted, actual) {
            (Label::Bystander, Label::Bystander) => self.tp += 1,
            (Label::Bystander, Label::Subject) => self.fp += 1,
            (Label::Subject, Label::Subject) => self.tn += 1,
            (Label::Subject, Label::Bystander) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::ShapeMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in predictions.iter().zip(labels) {
        cm.record(p, a);
    }
    Ok(cm)
}

/// Metric values; `None` marks a zero denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall_tpr: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
}

impl MetricsReport {
    /// True positive rate; the same value as recall.
    pub fn tpr(&self) -> Option<f64> {
        self.recall_tpr
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyInput);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    Ok(MetricsReport {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        precision,
        recall_tpr: recall,
        f1,
        fpr: ratio(cm.fp, cm.fp + cm.tn),
    })
}

/// One evaluated configuration, as exported to run logs and tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run: String,
    pub mask: String,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 7] = ["run", "mask", "accuracy", "precision", "recall", "f1", "fpr"];

    /// Fixed-width decimal cells; undefined metrics render as `NA`.
    pub fn cells(&self) -> [String; 7] {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
        let m = &self.metrics;
        [
            self.run.clone(),
            self.mask.clone(),
            f(m.accuracy),
            f(m.precision),
            f(m.recall_tpr),
            f(m.f1),
            f(m.fpr),
        ]
    }
}
