//! Two-layer subject/bystander network.
//!
//! `input -> Linear(D, 128) -> ReLU -> Dropout -> Linear(128, 2) -> LogSoftmax`
//! with D = 20, 512 or 532 depending on the [`FeatureMask`]. Output index 0 is
//! the subject class and index 1 the bystander (positive) class.

mod format;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureMask, FeatureVector, Scaler};
use crate::seed::rng_for;

pub use format::{load_model, read_model, save_model, write_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};

pub const HIDDEN_UNITS: usize = 128;
pub const CLASSES: usize = 2;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("shape mismatch: expected {expected} inputs, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("mask mismatch: model uses {model}, example uses {example}")]
    MaskMismatch {
        model: FeatureMask,
        example: FeatureMask,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model format: {0}")]
    Format(String),
    #[error("model format version {found} is not supported (this build reads up to {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("model file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Ground-truth or predicted role of a face. Bystander is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Subject,
    Bystander,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Subject => 0,
            Label::Bystander => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Subject => "subject",
            Label::Bystander => "bystander",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "subject" => Ok(Label::Subject),
            "bystander" => Ok(Label::Bystander),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 64,
            epochs: 50,
            dropout_rate: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub label: Label,
    pub face_id: String,
    pub image_id: String,
}

/// Network parameters plus the input scaler fitted on the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub mask: FeatureMask,
    /// Row-major `HIDDEN_UNITS x input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `CLASSES x HIDDEN_UNITS`.
    pub w2: Vec<f64>,
    pub b2: [f64; CLASSES],
    pub dropout_rate: f64,
    pub scaler: Scaler,
}

/// Parameter gradients, laid out like [`MlpModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: [f64; CLASSES],
}

impl Gradients {
    fn zeros(input_dim: usize) -> Self {
        Self {
            w1: vec![0.0; HIDDEN_UNITS * input_dim],
            b1: vec![0.0; HIDDEN_UNITS],
            w2: vec![0.0; CLASSES * HIDDEN_UNITS],
            b2: [0.0; CLASSES],
        }
    }

    fn scale(&mut self, k: f64) {
        self.w1.iter_mut().for_each(|g| *g *= k);
        self.b1.iter_mut().for_each(|g| *g *= k);
        self.w2.iter_mut().for_each(|g| *g *= k);
        self.b2.iter_mut().for_each(|g| *g *= k);
    }
}

/// Activations kept from a forward pass for backpropagation.
struct Trace {
    pre: Vec<f64>,
    /// Per-unit dropout multiplier (0 or 1/(1-p)); all ones at inference.
    keep: Vec<f64>,
    hidden: Vec<f64>,
    log_probs: [f64; CLASSES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub bystander_probability: f64,
}

fn log_softmax(z: [f64; CLASSES]) -> [f64; CLASSES] {
    let m = z[0].max(z[1]);
    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
    [z[0] - lse, z[1] - lse]
}

pub fn nll_loss(log_probs: &[f64; CLASSES], label: Label) -> f64 {
    -log_probs[label.index()]
}

/// He-initialized first layer, Xavier-initialized second layer, zero biases.
pub fn init_model(mask: FeatureMask, config: &TrainConfig) -> MlpModel {
    let d = mask.dim();
    let mut rng = rng_for(config.seed, "mlp/init");
    let he = Normal::new(0.0, (2.0 / d as f64).sqrt()).expect("positive std");
    let xavier = Normal::new(0.0, (2.0 / (HIDDEN_UNITS + CLASSES) as f64).sqrt()).expect("positive std");
    MlpModel {
        mask,
        w1: (0..HIDDEN_UNITS * d).map(|_| he.sample(&mut rng)).collect(),
        b1: vec![0.0; HIDDEN_UNITS],
        w2: (0..CLASSES * HIDDEN_UNITS).map(|_| xavier.sample(&mut rng)).collect(),
        b2: [0.0; CLASSES],
        dropout_rate: config.dropout_rate,
        scaler: Scaler::identity(d),
    }
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.mask.dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + CLASSES
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ClassifierError> {
        if x.len() != self.input_dim() {
            return Err(ClassifierError::ShapeMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    fn trace<R: Rng + ?Sized>(&self, x: &[f64], dropout: Option<&mut R>) -> Trace {
        let d = self.input_dim();
        let pre: Vec<f64> = (0..HIDDEN_UNITS)
            .map(|j| {
                let row = &self.w1[j * d..(j + 1) * d];
                self.b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        let keep: Vec<f64> = match dropout {
            Some(rng) if self.dropout_rate > 0.0 => {
                let scale = 1.0 / (1.0 - self.dropout_rate);
                (0..HIDDEN_UNITS)
                    .map(|_| if rng.random::<f64>() < self.dropout_rate { 0.0 } else { scale })
                    .collect()
            }
            _ => vec![1.0; HIDDEN_UNITS],
        };
        let hidden: Vec<f64> = pre.iter().zip(&keep).map(|(p, k)| p.max(0.0) * k).collect();
        let mut z = self.b2;
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.w2[c * HIDDEN_UNITS..(c + 1) * HIDDEN_UNITS];
            *zc += row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        Trace {
            pre,
            keep,
            hidden,
            log_probs: log_softmax(z),
        }
    }

    /// Log-probabilities `[subject, bystander]` for an already-scaled input.
    /// With `dropout` set the pass runs in training mode (inverted dropout on
    /// the hidden layer).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        dropout: Option<&mut R>,
    ) -> Result<[f64; CLASSES], ClassifierError> {
        self.check_input(x)?;
        Ok(self.trace(x, dropout).log_probs)
    }

    /// Inference-mode forward pass.
    pub fn log_probs(&self, x: &[f64]) -> Result<[f64; CLASSES], ClassifierError> {
        self.forward::<rand_chacha::ChaCha8Rng>(x, None)
    }

    /// Hidden activations after ReLU (and dropout in training mode).
    pub fn hidden<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        dropout: Option<&mut R>,
    ) -> Result<Vec<f64>, ClassifierError> {
        self.check_input(x)?;
        Ok(self.trace(x, dropout).hidden)
    }

    fn accumulate(&self, x: &[f64], label: Label, t: &Trace, g: &mut Gradients) {
        let d = self.input_dim();
        let mut dz = [t.log_probs[0].exp(), t.log_probs[1].exp()];
        dz[label.index()] -= 1.0;
        let mut dh = vec![0.0; HIDDEN_UNITS];
        for c in 0..CLASSES {
            g.b2[c] += dz[c];
            let row = c * HIDDEN_UNITS;
            for j in 0..HIDDEN_UNITS {
                g.w2[row + j] += dz[c] * t.hidden[j];
                dh[j] += dz[c] * self.w2[row + j];
            }
        }
        for j in 0..HIDDEN_UNITS {
            if t.pre[j] <= 0.0 || t.keep[j] == 0.0 {
                continue;
            }
            let dpre = dh[j] * t.keep[j];
            g.b1[j] += dpre;
            for (gw, v) in g.w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                *gw += dpre * v;
            }
        }
    }

    fn batch_gradients<R: Rng + ?Sized>(
        &self,
        batch: &[(&[f64], Label)],
        mut dropout: Option<&mut R>,
    ) -> Result<(f64, Gradients), ClassifierError> {
        let mut g = Gradients::zeros(self.input_dim());
        let mut loss = 0.0;
        for &(x, label) in batch {
            self.check_input(x)?;
            let t = self.trace(x, dropout.as_deref_mut());
            loss += nll_loss(&t.log_probs, label);
            self.accumulate(x, label, &t, &mut g);
        }
        let n = batch.len().max(1) as f64;
        g.scale(1.0 / n);
        Ok((loss / n, g))
    }

    /// Mean NLL over `batch` (scaled inputs) and its exact gradient with
    /// dropout disabled.
    pub fn backward(&self, batch: &[(&[f64], Label)]) -> Result<(f64, Gradients), ClassifierError> {
        self.batch_gradients::<rand_chacha::ChaCha8Rng>(batch, None)
    }

    /// Mean NLL over `batch` with dropout disabled.
    pub fn loss(&self, batch: &[(&[f64], Label)]) -> Result<f64, ClassifierError> {
        let mut total = 0.0;
        for &(x, label) in batch {
            total += nll_loss(&self.log_probs(x)?, label);
        }
        Ok(total / batch.len().max(1) as f64)
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Predicts from raw (unscaled) features. Ties go to the bystander class.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ClassifierError> {
        self.check_input(x)?;
        let scaled = self.scaler.transform(x)?;
        let lp = self.log_probs(&scaled)?;
        let label = if lp[1] >= lp[0] {
            Label::Bystander
        } else {
            Label::Subject
        };
        Ok(Prediction {
            label,
            bystander_probability: lp[1].exp(),
        })
    }
}

pub fn predict(model: &MlpModel, x: &FeatureVector) -> Result<Prediction, ClassifierError> {
    if x.mask() != model.mask {
        return Err(ClassifierError::MaskMismatch {
            model: model.mask,
            example: x.mask(),
        });
    }
    model.predict(x.values())
}

/// Predicts every vector in parallel; results keep input order.
pub fn predict_batch(model: &MlpModel, xs: &[FeatureVector]) -> Result<Vec<Prediction>, ClassifierError> {
    xs.par_iter().map(|x| predict(model, x)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Mean training-mode loss of each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch SGD with momentum. The scaler is fitted on `dataset` before the
/// first epoch; shuffling, initialization and dropout draw from independent
/// streams derived from `config.seed`.
pub fn train(dataset: &[LabeledExample], config: &TrainConfig) -> Result<TrainOutcome, ClassifierError> {
    config.validate()?;
    let first = dataset.first().ok_or(ClassifierError::EmptyDataset)?;
    let mask = first.features.mask();
    if let Some(bad) = dataset.iter().find(|e| e.features.mask() != mask) {
        return Err(ClassifierError::MaskMismatch {
            model: mask,
            example: bad.features.mask(),
        });
    }
    let scaler = Scaler::fit(dataset.iter().map(|e| e.features.values()))?;
    let scaled: Vec<Vec<f64>> = dataset
        .iter()
        .map(|e| scaler.transform(e.features.values()))
        .collect::<Result<_, _>>()?;

    let mut model = init_model(mask, config);
    model.scaler = scaler;
    let mut velocity = Gradients::zeros(model.input_dim());
    let mut shuffle_rng = rng_for(config.seed, "mlp/shuffle");
    let mut dropout_rng = rng_for(config.seed, "mlp/dropout");
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], Label)> = chunk
                .iter()
                .map(|&i| (scaled[i].as_slice(), dataset[i].label))
                .collect();
            let (loss, grad) = model.batch_gradients(&batch, Some(&mut dropout_rng))?;
            if !loss.is_finite() {
                return Err(ClassifierError::Divergence { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            let grads: [&[f64]; 4] = [&grad.w1, &grad.b1, &grad.w2, &grad.b2];
            let vels = velocity.params_mut();
            for ((params, vel), g) in model.params_mut().into_iter().zip(vels).zip(grads) {
                for ((p, v), gi) in params.iter_mut().zip(vel.iter_mut()).zip(g) {
                    *v = config.momentum * *v - config.learning_rate * gi;
                    *p += *v;
                }
            }
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || !model.w1.iter().chain(&model.w2).all(|v| v.is_finite()) {
            return Err(ClassifierError::Divergence { epoch });
        }
        loss_history.push(mean);
    }
    Ok(TrainOutcome {
        model,
        loss_history,
    })
}

impl Gradients {
    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_model(mask: FeatureMask) -> MlpModel {
        let d = mask.dim();
        MlpModel {
            mask,
            w1: vec![0.0; HIDDEN_UNITS * d],
            b1: vec![0.0; HIDDEN_UNITS],
            w2: vec![0.0; CLASSES * HIDDEN_UNITS],
            b2: [0.0; CLASSES],
            dropout_rate: 0.5,
            scaler: Scaler::identity(d),
        }
    }

    #[test]
    fn init_shapes_and_determinism() {
        let cfg = TrainConfig { seed: 11, ..TrainConfig::default() };
        let a = init_model(FeatureMask::Ff, &cfg);
        assert_eq!(a.w1.len(), 128 * 20);
        assert_eq!(init_model(FeatureMask::FfFm, &cfg).w1.len(), 128 * 532);
        assert_eq!(init_model(FeatureMask::Fm, &cfg).w1.len(), 128 * 512);
        let b = init_model(FeatureMask::Ff, &cfg);
        assert!(a.w1.iter().zip(&b.w1).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, b);
        assert!(a.b1.iter().all(|&v| v == 0.0));
        let std = (a.w1.iter().map(|v| v * v).sum::<f64>() / a.w1.len() as f64).sqrt();
        assert!((std - (2.0f64 / 20.0).sqrt()).abs() < 0.03, "{std}");
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = zero_model(FeatureMask::Ff);
        let lp = m.log_probs(&[0.3; 20]).unwrap();
        assert_eq!(lp, [0.5f64.ln(); 2]);
        assert!((nll_loss(&lp, Label::Subject) - std::f64::consts::LN_2).abs() < 1e-12);
        let p = m.predict(&[1.0; 20]).unwrap();
        assert_eq!(p.label, Label::Bystander);
        assert_eq!(p.bystander_probability, 0.5);
    }

    #[test]
    fn forced_logits() {
        let mut m = zero_model(FeatureMask::Ff);
        m.b2 = [-10.0, 10.0];
        let p = m.predict(&[5.0; 20]).unwrap();
        assert_eq!(p.label, Label::Bystander);
        assert!(p.bystander_probability > 1.0 - 1e-8);
        assert!(nll_loss(&m.log_probs(&[0.0; 20]).unwrap(), Label::Bystander) < 1e-8);
        // shifting both logits leaves the prediction unchanged
        let mut shifted = m.clone();
        shifted.b2 = [-10.0 + 37.5, 10.0 + 37.5];
        let q = shifted.predict(&[5.0; 20]).unwrap();
        assert_eq!(q.label, p.label);
        assert!((q.bystander_probability - p.bystander_probability).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let m = zero_model(FeatureMask::Ff);
        assert!(matches!(
            m.log_probs(&[0.0; 19]),
            Err(ClassifierError::ShapeMismatch { expected: 20, got: 19 })
        ));
        assert!(m.predict(&[0.0; 532]).is_err());
    }

    #[test]
    fn inference_ignores_dropout_seed() {
        let m = init_model(FeatureMask::Ff, &TrainConfig::default());
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.1 - 1.0).collect();
        let a = m.forward::<ChaCha8Rng>(&x, None).unwrap();
        let b = m.forward::<ChaCha8Rng>(&x, None).unwrap();
        assert_eq!(a, b);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let t1 = m.forward(&x, Some(&mut r1)).unwrap();
        let t2 = m.forward(&x, Some(&mut r2)).unwrap();
        assert_ne!(t1, t2);
        for lp in [a, t1, t2] {
            assert!((lp[0].exp() + lp[1].exp() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { dropout_rate: 1.0, ..Default::default() }.validate().is_err());
        assert!(train(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let ex: Vec<LabeledExample> = (0..8)
            .map(|i| LabeledExample {
                features: FeatureVector::new(
                    (0..20).map(|k| ((i * 7 + k) % 5) as f64).collect(),
                    FeatureMask::Ff,
                )
                .unwrap(),
                label: if i % 2 == 0 { Label::Subject } else { Label::Bystander },
                face_id: format!("f{i}"),
                image_id: format!("i{i}"),
            })
            .collect();
        let cfg = TrainConfig { learning_rate: 1e200, momentum: 0.0, epochs: 5, ..Default::default() };
        assert!(matches!(train(&ex, &cfg), Err(ClassifierError::Divergence { epoch: 1 | 2 })));
    }
}
