//! `evaluate`: holdout, k-fold, subject-count stratification and feature
//! ablation, all with image-grouped splits.

use std::path::Path;

use facegate::audit::render::Table;
use facegate::classifier::{predict_batch, train, LabeledExample, TrainConfig};
use facegate::evaluation::{
    confusion, k_fold, metrics, split_80_10_10, stratify_by_subject_count, ConfusionMatrix, FaceOutcome,
    MetricsRow, StratifiedReport,
};
use facegate::features::FeatureMask;
use facegate::records::write_records;
use facegate::seed::derive_seed;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{labels, pick, Inputs};
use crate::error::{CliError, CliResult};

pub const METRICS_SCHEMA: &str = "facegate.metrics";

pub struct Dataset {
    inputs: Inputs,
    labels: std::collections::HashMap<facegate::providers::FaceKey, facegate::classifier::Label>,
}

impl Dataset {
    pub fn load(features: &Path, label_path: &Path, embeddings: Option<&Path>, masks: &[FeatureMask]) -> CliResult<Self> {
        let widest = if masks.iter().any(|m| m.needs_embedding()) { FeatureMask::FfFm } else { FeatureMask::Ff };
        Ok(Self { inputs: Inputs::load(features, embeddings, widest)?, labels: labels(label_path)? })
    }

    fn examples(&self, mask: FeatureMask) -> CliResult<Vec<LabeledExample>> {
        self.inputs.examples(Some(&self.labels), mask)
    }
}

fn fold_config(config: &RunConfig, run: &str) -> TrainConfig {
    TrainConfig { seed: derive_seed(config.seed, &format!("evaluate/{run}")), ..config.train.clone() }
}

/// Trains on `train_idx` and returns predictions for `test_idx`.
fn fit_and_predict(
    data: &[LabeledExample],
    train_idx: &[usize],
    test_idx: &[usize],
    config: &TrainConfig,
) -> CliResult<Vec<FaceOutcome>> {
    if train_idx.is_empty() {
        return Err(CliError::Data("a training split is empty".into()));
    }
    let model = train(&pick(data, train_idx), config)?.model;
    let test = pick(data, test_idx);
    let xs: Vec<_> = test.iter().map(|e| e.features.clone()).collect();
    let predicted = predict_batch(&model, &xs)?;
    Ok(test
        .iter()
        .zip(predicted)
        .map(|(e, p)| FaceOutcome { image_id: e.image_id.clone(), truth: e.label, predicted: p.label })
        .collect())
}

fn row(run: &str, mask: FeatureMask, outcomes: &[FaceOutcome]) -> CliResult<MetricsRow> {
    let p: Vec<_> = outcomes.iter().map(|o| o.predicted).collect();
    let t: Vec<_> = outcomes.iter().map(|o| o.truth).collect();
    let cm = confusion(&p, &t)?;
    Ok(MetricsRow { run: run.to_string(), mask: mask.as_str().to_string(), confusion: cm, metrics: metrics(&cm)? })
}

fn image_ids(data: &[LabeledExample]) -> Vec<&str> {
    data.iter().map(|e| e.image_id.as_str()).collect()
}

/// Validation and test rows for one 80-10-10 split.
pub fn holdout(data: &Dataset, mask: FeatureMask, config: &RunConfig) -> CliResult<Vec<MetricsRow>> {
    let examples = data.examples(mask)?;
    let split = split_80_10_10(&image_ids(&examples), derive_seed(config.seed, "evaluate/split"));
    let tc = fold_config(config, &format!("holdout/{mask}"));
    let mut rows = Vec::new();
    for (name, idx) in [("validation", &split.val), ("test", &split.test)] {
        if idx.is_empty() {
            continue;
        }
        rows.push(row(name, mask, &fit_and_predict(&examples, &split.train, idx, &tc)?)?);
    }
    Ok(rows)
}

/// Out-of-fold outcomes for every face, plus one row per fold.
fn cross_validate(
    examples: &[LabeledExample],
    mask: FeatureMask,
    k: usize,
    config: &RunConfig,
) -> CliResult<(Vec<MetricsRow>, Vec<FaceOutcome>)> {
    let folds = k_fold(&image_ids(examples), k, derive_seed(config.seed, "evaluate/folds"))?;
    let per_fold: Vec<Vec<FaceOutcome>> = folds
        .par_iter()
        .enumerate()
        .map(|(i, f)| fit_and_predict(examples, &f.train, &f.test, &fold_config(config, &format!("fold/{i}/{mask}"))))
        .collect::<CliResult<_>>()?;
    let mut rows = Vec::with_capacity(k + 1);
    for (i, o) in per_fold.iter().enumerate() {
        rows.push(row(&format!("fold{}", i + 1), mask, o)?);
    }
    let pooled: Vec<FaceOutcome> = per_fold.into_iter().flatten().collect();
    let mut total = ConfusionMatrix::default();
    rows.iter().for_each(|r| total.merge(&r.confusion));
    rows.push(MetricsRow { run: "pooled".into(), mask: mask.as_str().into(), confusion: total, metrics: metrics(&total)? });
    Ok((rows, pooled))
}

pub fn kfold(data: &Dataset, mask: FeatureMask, k: usize, config: &RunConfig) -> CliResult<Vec<MetricsRow>> {
    Ok(cross_validate(&data.examples(mask)?, mask, k, config)?.0)
}

/// Groups out-of-fold predictions by the number of subjects per image.
pub fn stratify(data: &Dataset, mask: FeatureMask, k: usize, config: &RunConfig) -> CliResult<StratifiedReport> {
    let (_, outcomes) = cross_validate(&data.examples(mask)?, mask, k, config)?;
    Ok(stratify_by_subject_count(&outcomes))
}

/// Test-set metrics of one shared split for each feature mask.
pub fn ablate(data: &Dataset, config: &RunConfig) -> CliResult<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for mask in FeatureMask::ALL {
        let examples = data.examples(mask)?;
        let split = split_80_10_10(&image_ids(&examples), derive_seed(config.seed, "evaluate/split"));
        let tc = fold_config(config, &format!("holdout/{mask}"));
        rows.push(row("test", mask, &fit_and_predict(&examples, &split.train, &split.test, &tc)?)?);
    }
    Ok(rows)
}

pub fn metrics_table(rows: &[MetricsRow]) -> Table {
    let mut header = MetricsRow::HEADER.to_vec();
    header.extend(["tp", "fp", "tn", "fn"]);
    Table {
        name: "metrics",
        header,
        rows: rows
            .iter()
            .map(|r| {
                let mut cells = r.cells().to_vec();
                let c = r.confusion;
                cells.extend([c.tp, c.fp, c.tn, c.fn_].map(|v| v.to_string()));
                cells
            })
            .collect(),
    }
}

pub fn stratified_table(report: &StratifiedReport) -> Table {
    let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.4}"));
    Table {
        name: "stratified",
        header: vec!["subjects", "images", "faces", "accuracy", "precision", "recall", "f1", "fpr"],
        rows: report
            .groups
            .iter()
            .map(|g| {
                let m = g.metrics;
                vec![
                    g.group.as_str().to_string(),
                    g.images.to_string(),
                    g.faces.to_string(),
                    f(m.and_then(|m| m.accuracy)),
                    f(m.and_then(|m| m.precision)),
                    f(m.and_then(|m| m.recall_tpr)),
                    f(m.and_then(|m| m.f1)),
                    f(m.and_then(|m| m.fpr)),
                ]
            })
            .collect(),
    }
}

pub fn write_metrics(out: &Path, rows: &[MetricsRow]) -> CliResult<()> {
    write_records(&out.join("metrics.jsonl"), METRICS_SCHEMA, 1, rows)?;
    Ok(())
}
