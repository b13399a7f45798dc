//! ONNX-backed embedding and head-pose providers (feature `onnx`).
//!
//! The embedding model takes a `1x3x224x224` ImageNet-normalized RGB crop and
//! must produce 512 values (a ResNet-34 with its classification layer
//! removed). The pose model follows the binned-regression layout: three
//! outputs of 66 logits each (yaw, pitch, roll), decoded as the softmax
//! expectation over 3-degree bins starting at -99.

use std::path::Path;

use image::imageops::FilterType;
use tract_onnx::prelude::*;

use super::{Embedding, EmbeddingProvider, EmbeddingSource, FaceCrop, PoseModel, ProviderError};

const INPUT_SIDE: u32 = 224;
const MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const STD: [f32; 3] = [0.229, 0.224, 0.225];
const POSE_BINS: usize = 66;

type Plan = std::sync::Arc<TypedRunnableModel>;

fn model_err(e: impl std::fmt::Display) -> ProviderError {
    ProviderError::Model(e.to_string())
}

fn load_plan(path: &Path) -> Result<Plan, ProviderError> {
    if !path.exists() {
        return Err(ProviderError::Model(format!("model file {} not found", path.display())));
    }
    tract_onnx::onnx()
        .model_for_path(path)
        .and_then(|m| m.with_input_fact(0, f32::fact([1, 3, INPUT_SIDE as usize, INPUT_SIDE as usize]).into()))
        .and_then(|m| m.into_optimized())
        .and_then(|m| m.into_runnable())
        .map_err(model_err)
}

fn crop_tensor(crop: &FaceCrop<'_>) -> Result<Tensor, ProviderError> {
    let img = crop
        .image
        .ok_or_else(|| ProviderError::Model("provider needs decoded pixels".into()))?;
    let b = crop.face.bbox;
    let face = image::imageops::crop_imm(img, b.x, b.y, b.w, b.h).to_image();
    let resized = image::imageops::resize(&face, INPUT_SIDE, INPUT_SIDE, FilterType::Triangle);
    let side = INPUT_SIDE as usize;
    let t = tract_ndarray::Array4::from_shape_fn((1, 3, side, side), |(_, c, y, x)| {
        let v = resized.get_pixel(x as u32, y as u32)[c] as f32 / 255.0;
        (v - MEAN[c]) / STD[c]
    });
    Ok(t.into())
}

pub struct OnnxEmbedder {
    plan: Plan,
}

impl OnnxEmbedder {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self {
            plan: load_plan(path)?,
        })
    }
}

impl EmbeddingProvider for OnnxEmbedder {
    fn embed(&self, crop: &FaceCrop<'_>) -> Result<Embedding, ProviderError> {
        let input = crop_tensor(crop)?;
        let out = self.plan.run(tvec!(input.into())).map_err(model_err)?;
        let view = out[0].to_plain_array_view::<f32>().map_err(model_err)?;
        let values: Vec<f64> = view.iter().map(|&v| v as f64).collect();
        Embedding::new(values, EmbeddingSource::Model)
    }

    fn needs_pixels(&self) -> bool {
        true
    }
}

pub struct OnnxPose {
    plan: Plan,
}

impl OnnxPose {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Ok(Self {
            plan: load_plan(path)?,
        })
    }
}

/// Softmax expectation over 3-degree bins centred from -99 degrees.
pub fn decode_binned_angle(logits: &[f32]) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let weights: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let expectation: f64 = weights.iter().enumerate().map(|(i, w)| i as f64 * w).sum::<f64>() / total;
    expectation * 3.0 - 99.0
}

impl PoseModel for OnnxPose {
    fn infer(&self, crop: &FaceCrop<'_>) -> Result<[f64; 3], ProviderError> {
        let input = crop_tensor(crop)?;
        let out = self.plan.run(tvec!(input.into())).map_err(model_err)?;
        if out.len() < 3 {
            return Err(ProviderError::Model(format!(
                "pose model returned {} outputs, expected 3",
                out.len()
            )));
        }
        let mut angles = [0.0; 3];
        for (k, angle) in angles.iter_mut().enumerate() {
            let view = out[k].to_plain_array_view::<f32>().map_err(model_err)?;
            let logits: Vec<f32> = view.iter().copied().collect();
            if logits.len() != POSE_BINS {
                return Err(ProviderError::Model(format!(
                    "pose output {k} has {} bins, expected {POSE_BINS}",
                    logits.len()
                )));
            }
            *angle = decode_binned_angle(&logits);
        }
        Ok(angles)
    }
}
