//! Single-layer softmax classifier trained with AdamW.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store::{ClassId, VectorIndex};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    pub early_stopping_patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            early_stopping_patience: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl LinearProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.early_stopping_patience >= self.epochs {
            return bad("early_stopping_patience must be smaller than epochs");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("epsilon must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        Ok(())
    }
}

/// Borrowed row-major feature matrix with labels.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    dimension: usize,
    vectors: &'a [f32],
    labels: &'a [ClassId],
}

impl<'a> Samples<'a> {
    pub fn new(dimension: usize, vectors: &'a [f32], labels: &'a [ClassId]) -> Result<Self> {
        if vectors.len() != dimension * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dimension * labels.len(),
                found: vectors.len(),
            });
        }
        Ok(Self {
            dimension,
            vectors,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.vectors[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn label(&self, i: usize) -> ClassId {
        self.labels[i]
    }
}

impl<'a> From<&'a VectorIndex> for Samples<'a> {
    fn from(index: &'a VectorIndex) -> Self {
        Samples {
            dimension: index.dimension(),
            vectors: index.vectors(),
            labels: index.labels(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: usize,
    pub dimension: usize,
    /// `classes x dimension`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearModel {
    pub fn zeros(classes: usize, dimension: usize) -> Self {
        Self {
            classes,
            dimension,
            weights: vec![0.0; classes * dimension],
            bias: vec![0.0; classes],
        }
    }

    pub fn logits(&self, x: &[f32]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| {
                let w = &self.weights[c * self.dimension..(c + 1) * self.dimension];
                let dot: f64 = w.iter().zip(x).map(|(&w, &x)| f64::from(w) * f64::from(x)).sum();
                dot + f64::from(self.bias[c])
            })
            .collect()
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean softmax cross-entropy over `rows` and its gradient. The weight-decay
/// term is not part of the loss; AdamW applies it separately.
pub fn loss_and_gradient(model: &LinearModel, samples: &Samples<'_>, rows: &[usize]) -> (f64, Gradient) {
    let d = model.dimension;
    let mut grad = Gradient {
        weights: vec![0.0; model.weights.len()],
        bias: vec![0.0; model.classes],
    };
    let mut loss = 0.0;
    for &i in rows {
        let x = samples.row(i);
        let y = samples.label(i) as usize;
        let logits = model.logits(x);
        let probs = softmax(&logits);
        loss -= probs[y].ln();
        for (c, &p) in probs.iter().enumerate() {
            let coef = p - if c == y { 1.0 } else { 0.0 };
            grad.bias[c] += coef;
            for (g, &xv) in grad.weights[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += coef * f64::from(xv);
            }
        }
    }
    let scale = 1.0 / rows.len().max(1) as f64;
    grad.weights.iter_mut().for_each(|g| *g *= scale);
    grad.bias.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

/// Mean cross-entropy over every sample.
pub fn mean_loss(model: &LinearModel, samples: &Samples<'_>) -> f64 {
    let total: f64 = (0..samples.len())
        .map(|i| -softmax(&model.logits(samples.row(i)))[samples.label(i) as usize].ln())
        .sum();
    total / samples.len().max(1) as f64
}

/// AdamW with decoupled weight decay. Decay applies to weights, not biases.
#[derive(Clone, Debug)]
pub struct AdamW {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    weight_decay: f64,
    step: i32,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl AdamW {
    pub fn new(config: &LinearProbeConfig, model: &LinearModel) -> Self {
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            weight_decay: config.weight_decay,
            step: 0,
            m_w: vec![0.0; model.weights.len()],
            v_w: vec![0.0; model.weights.len()],
            m_b: vec![0.0; model.bias.len()],
            v_b: vec![0.0; model.bias.len()],
        }
    }

    pub fn step(&mut self, model: &mut LinearModel, grad: &Gradient) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let params = [
            (
                &mut model.weights,
                &grad.weights,
                &mut self.m_w,
                &mut self.v_w,
                self.weight_decay,
            ),
            (&mut model.bias, &grad.bias, &mut self.m_b, &mut self.v_b, 0.0),
        ];
        for (theta, g, m, v, decay) in params {
            for i in 0..theta.len() {
                let mut p = f64::from(theta[i]);
                p -= self.learning_rate * decay * p;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                theta[i] = p as f32;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedProbe {
    pub model: LinearModel,
    pub history: Vec<EpochLoss>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: usize,
}

/// Trains from zero-initialized parameters. Each epoch visits the training
/// set in a seeded shuffled order; training stops once validation loss has
/// not improved for `early_stopping_patience` epochs, and the parameters of
/// the best validation epoch are returned.
pub fn train_linear_probe(
    train: &Samples<'_>,
    val: &Samples<'_>,
    classes: usize,
    config: &LinearProbeConfig,
) -> Result<TrainedProbe> {
    config.validate()?;
    if val.is_empty() {
        return Err(Error::EmptyValidationSet);
    }
    if train.dimension != val.dimension {
        return Err(Error::DimensionMismatch {
            expected: train.dimension,
            found: val.dimension,
        });
    }
    let mut present = vec![false; classes];
    for &l in train.labels.iter().chain(val.labels) {
        *present
            .get_mut(l as usize)
            .ok_or_else(|| Error::UnknownClass(format!("class id {l}")))? = true;
    }
    let mut train_classes = train.labels.to_vec();
    train_classes.sort_unstable();
    train_classes.dedup();
    if train_classes.len() < 2 {
        return Err(Error::SingleClass);
    }

    let mut model = LinearModel::zeros(classes, train.dimension);
    let mut optimizer = AdamW::new(config, &model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, model.clone(), 0usize);
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = loss_and_gradient(&model, train, batch);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, history });
            }
            weighted += loss * batch.len() as f64;
            optimizer.step(&mut model, &grad);
        }
        let train_loss = weighted / train.len() as f64;
        let val_loss = mean_loss(&model, val);
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, history });
        }
        if val_loss < best.0 {
            best = (val_loss, model.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stopping_patience {
                break;
            }
        }
    }

    Ok(TrainedProbe {
        model: best.1,
        history,
        best_epoch: best.2,
    })
}

/// Softmax probability rows for row-major `vectors`.
pub fn linear_predict(model: &LinearModel, vectors: &[f32]) -> Result<Vec<Vec<f64>>> {
    if model.dimension == 0 || !vectors.len().is_multiple_of(model.dimension) {
        return Err(Error::DimensionMismatch {
            expected: model.dimension,
            found: vectors.len(),
        });
    }
    Ok(vectors
        .chunks_exact(model.dimension)
        .map(|x| softmax(&model.logits(x)))
        .collect())
}

pub fn argmax(row: &[f64]) -> ClassId {
    let mut best = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = i;
        }
    }
    best as ClassId
}
