//! `train` and `predict`.

use std::path::Path;

use facegate::classifier::{load_model, predict_batch, save_model, train, TrainConfig};
use facegate::evaluation::{confusion, metrics, MetricsReport};
use facegate::features::FeatureMask;
use facegate::providers::{write_predictions, PredictionRecord};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{labels, Inputs};
use crate::error::CliResult;

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub examples: usize,
    pub mask: FeatureMask,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
}

pub fn run_train(
    features: &Path,
    label_path: &Path,
    embeddings: Option<&Path>,
    out: &Path,
    config: &RunConfig,
) -> CliResult<TrainSummary> {
    let inputs = Inputs::load(features, embeddings, config.mask)?;
    let labels = labels(label_path)?;
    let examples = inputs.examples(Some(&labels), config.mask)?;
    let outcome = train(&examples, &config.train)?;
    std::fs::create_dir_all(out)?;
    save_model(&outcome.model, &out.join("model.fgmm"))?;
    let summary = TrainSummary {
        examples: examples.len(),
        mask: config.mask,
        config: config.train.clone(),
        loss_history: outcome.loss_history,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(out.join("train.json"), json + "\n")?;
    Ok(summary)
}

#[derive(Debug, Serialize)]
pub struct PredictSummary {
    pub faces: usize,
    pub bystanders: usize,
    /// Present when ground-truth labels were supplied.
    pub metrics: Option<MetricsReport>,
}

pub fn run_predict(
    model_path: &Path,
    features: &Path,
    embeddings: Option<&Path>,
    label_path: Option<&Path>,
    out: &Path,
) -> CliResult<PredictSummary> {
    let model = load_model(model_path)?;
    let inputs = Inputs::load(features, embeddings, model.mask)?;
    let truth = label_path.map(labels).transpose()?;
    let examples = inputs.examples(truth.as_ref(), model.mask)?;
    let vectors: Vec<_> = examples.iter().map(|e| e.features.clone()).collect();
    let predictions = predict_batch(&model, &vectors)?;
    let records: Vec<PredictionRecord> = examples
        .iter()
        .zip(&predictions)
        .map(|(e, p)| PredictionRecord {
            image_id: e.image_id.clone(),
            face_id: e.face_id.clone(),
            label: p.label,
            bystander_probability: p.bystander_probability,
        })
        .collect();
    std::fs::create_dir_all(out)?;
    write_predictions(&out.join("predictions.jsonl"), &records)?;
    let metrics = match truth {
        Some(_) => {
            let predicted: Vec<_> = predictions.iter().map(|p| p.label).collect();
            let actual: Vec<_> = examples.iter().map(|e| e.label).collect();
            let m = metrics(&confusion(&predicted, &actual)?)?;
            let json = serde_json::to_string_pretty(&m).expect("metrics serialize");
            std::fs::write(out.join("metrics.json"), json + "\n")?;
            Some(m)
        }
        None => None,
    };
    Ok(PredictSummary {
        faces: records.len(),
        bystanders: records.iter().filter(|r| r.label == facegate::classifier::Label::Bystander).count(),
        metrics,
    })
}
