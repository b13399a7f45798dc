//! Inter-annotator agreement over completed tasks, using the shared kappa
//! implementations.

use std::collections::BTreeSet;

use facegate::audit::AnnotationRecord;
use facegate::evaluation::{category_counts, cohen_kappa, fleiss_kappa, Agreement};
use serde::Serialize;

use crate::board::{Board, Task};

#[derive(Debug, Clone, Serialize)]
pub struct PairAgreement {
    pub annotators: [String; 2],
    pub items: usize,
    pub agreement: Option<Agreement>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldAgreement {
    pub field: &'static str,
    pub items: usize,
    /// Fleiss' kappa over items with the full set of ratings.
    pub fleiss: Option<Agreement>,
    /// Cohen's kappa for every annotator pair over the items both rated.
    pub pairs: Vec<PairAgreement>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AgreementReport {
    pub tasks: usize,
    pub raters_per_task: usize,
    pub fields: Vec<FieldAgreement>,
}

type Extract = fn(&AnnotationRecord) -> Option<String>;

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("coding values serialize")
}

/// Coded fields and how each record's value is rendered as a category.
pub const FIELDS: [(&str, Extract); 6] = [
    ("face_verification", |r| Some(json(&r.coding.face_verification))),
    ("manipulation_verification", |r| Some(json(&r.coding.manipulation_verification))),
    ("intentions", |r| Some(json(&r.coding.intentions))),
    ("parts", |r| Some(json(&r.coding.parts))),
    ("methods", |r| Some(json(&r.coding.methods))),
    ("person_label", |r| r.person_label.map(|l| json(&l))),
];

/// Per-field category lists for the given tasks; items missing a value for
/// any rater are dropped.
pub fn field_items(tasks: &[&Task], extract: Extract) -> Vec<Vec<(String, String)>> {
    tasks
        .iter()
        .filter_map(|t| {
            t.records.values().map(|r| extract(r).map(|v| (r.annotator_id.clone(), v))).collect::<Option<Vec<_>>>()
        })
        .collect()
}

pub fn agreement(board: &Board) -> AgreementReport {
    let n = board.annotators();
    let complete: Vec<&Task> = board.tasks().filter(|t| t.records.len() == n).collect();
    let fields = FIELDS
        .iter()
        .map(|&(name, extract)| {
            let items = field_items(&complete, extract);
            let values: Vec<Vec<String>> = items.iter().map(|i| i.iter().map(|(_, v)| v.clone()).collect()).collect();
            let fleiss = if n >= 2 && !values.is_empty() {
                let (_, counts) = category_counts(&values);
                fleiss_kappa(&counts).ok()
            } else {
                None
            };
            let raters: BTreeSet<&str> = items.iter().flatten().map(|(a, _)| a.as_str()).collect();
            let raters: Vec<&str> = raters.into_iter().collect();
            let mut pairs = Vec::new();
            for (i, a) in raters.iter().enumerate() {
                for b in &raters[i + 1..] {
                    let (xs, ys): (Vec<&String>, Vec<&String>) = items
                        .iter()
                        .filter_map(|item| {
                            let x = item.iter().find(|(r, _)| r == a)?;
                            let y = item.iter().find(|(r, _)| r == b)?;
                            Some((&x.1, &y.1))
                        })
                        .unzip();
                    if xs.is_empty() {
                        continue;
                    }
                    pairs.push(PairAgreement {
                        annotators: [a.to_string(), b.to_string()],
                        items: xs.len(),
                        agreement: cohen_kappa(&xs, &ys).ok(),
                    });
                }
            }
            FieldAgreement { field: name, items: items.len(), fleiss, pairs }
        })
        .collect();
    AgreementReport { tasks: complete.len(), raters_per_task: n, fields }
}
