//! Local training backends, FedAvg aggregation and evaluation.
//!
//! Both learners are linear in the features: a `K × (f + 1)` weight matrix
//! (row-major, bias last) scored by `argmax_k (W_k · x + b_k)`. They differ
//! only in the training loss: squared error against one-hot targets for
//! `linear_probe`, softmax cross-entropy for `logistic`.

use serde::{Deserialize, Serialize};

use crate::data::LabeledShard;
use crate::error::{Result, SimError};
use crate::model::{ClientId, ModelVector, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    LinearProbe,
    #[default]
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learner: LearnerKind,
    /// Simulated compute time per sample per epoch at full CPU share.
    pub cost_per_sample_ms: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 2,
            batch_size: 32,
            learner: LearnerKind::Logistic,
            cost_per_sample_ms: 1.0,
        }
    }
}

impl TrainingConfig {
    pub fn check(&self, path: &str, out: &mut Vec<Violation>) {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            out.push(Violation::new(format!("{path}.learning_rate"), "must be > 0"));
        }
        if self.epochs < 1 {
            out.push(Violation::new(format!("{path}.epochs"), "must be >= 1"));
        }
        if self.batch_size < 1 {
            out.push(Violation::new(format!("{path}.batch_size"), "must be >= 1"));
        }
        if !(self.cost_per_sample_ms >= 0.0 && self.cost_per_sample_ms.is_finite()) {
            out.push(Violation::new(format!("{path}.cost_per_sample_ms"), "must be >= 0"));
        }
    }
}

/// Weights returned by one client. `delta` is the full post-training weight
/// vector, so aggregation is a plain weighted model average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: ClientId,
    pub delta: ModelVector,
    pub dataset_size: usize,
    pub train_time_ms: f64,
}

pub fn model_dim(n_features: usize, n_classes: usize) -> usize {
    n_classes * (n_features + 1)
}

fn check_dim(w: &[f64], shard: &LabeledShard) -> Result<()> {
    let expected = model_dim(shard.n_features, shard.n_classes);
    if w.len() != expected {
        return Err(SimError::DimensionMismatch {
            expected,
            found: w.len(),
        });
    }
    Ok(())
}

fn logits(w: &[f64], x: &[f64], n_classes: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..n_classes)
        .map(|k| {
            let row = &w[k * stride..(k + 1) * stride];
            row[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + row[x.len()]
        })
        .collect()
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Per-sample residual `∂loss/∂logits` for the given learner.
fn residual(kind: LearnerKind, mut z: Vec<f64>, label: usize) -> Vec<f64> {
    if kind == LearnerKind::Logistic {
        softmax_in_place(&mut z);
    }
    z[label] -= 1.0;
    z
}

/// Mean training loss over the whole shard.
pub fn loss(kind: LearnerKind, w: &ModelVector, shard: &LabeledShard) -> Result<f64> {
    check_dim(w.as_slice(), shard)?;
    if shard.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = (0..shard.len())
        .map(|i| {
            let z = logits(w.as_slice(), shard.row(i), shard.n_classes);
            let y = shard.labels[i];
            match kind {
                LearnerKind::LinearProbe => {
                    0.5 * z
                        .iter()
                        .enumerate()
                        .map(|(k, v)| {
                            let t = if k == y { 1.0 } else { 0.0 };
                            (v - t) * (v - t)
                        })
                        .sum::<f64>()
                }
                LearnerKind::Logistic => {
                    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    lse - z[y]
                }
            }
        })
        .sum();
    Ok(total / shard.len() as f64)
}

fn gradient_range(kind: LearnerKind, w: &[f64], shard: &LabeledShard, range: std::ops::Range<usize>) -> Vec<f64> {
    let f = shard.n_features;
    let stride = f + 1;
    let mut g = vec![0.0; w.len()];
    let n = range.len().max(1) as f64;
    for i in range {
        let x = shard.row(i);
        let r = residual(kind, logits(w, x, shard.n_classes), shard.labels[i]);
        for (k, rk) in r.iter().enumerate() {
            let row = &mut g[k * stride..(k + 1) * stride];
            for (gj, xj) in row[..f].iter_mut().zip(x) {
                *gj += rk * xj;
            }
            row[f] += rk;
        }
    }
    g.iter_mut().for_each(|v| *v /= n);
    g
}

/// Full-batch gradient of [`loss`].
pub fn gradient(kind: LearnerKind, w: &ModelVector, shard: &LabeledShard) -> Result<ModelVector> {
    check_dim(w.as_slice(), shard)?;
    Ok(ModelVector(gradient_range(kind, w.as_slice(), shard, 0..shard.len())))
}

pub fn logistic_loss(w: &ModelVector, shard: &LabeledShard) -> Result<f64> {
    loss(LearnerKind::Logistic, w, shard)
}

pub fn logistic_gradient(w: &ModelVector, shard: &LabeledShard) -> Result<ModelVector> {
    gradient(LearnerKind::Logistic, w, shard)
}

/// `epochs · n · cost_per_sample_ms / cpu_share`; CPU share is floored at 1%.
pub fn train_time_ms(cfg: &TrainingConfig, n_samples: usize, cpu_share: f64) -> f64 {
    cfg.epochs as f64 * n_samples as f64 * cfg.cost_per_sample_ms / cpu_share.max(0.01)
}

/// Mini-batch gradient descent from `global`, batches taken in shard order.
pub fn train_weights(global: &ModelVector, shard: &LabeledShard, cfg: &TrainingConfig) -> Result<ModelVector> {
    check_dim(global.as_slice(), shard)?;
    let mut w = global.0.clone();
    let n = shard.len();
    let batch = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        let mut start = 0;
        while start < n {
            let end = (start + batch).min(n);
            let g = gradient_range(cfg.learner, &w, shard, start..end);
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= cfg.learning_rate * gi;
            }
            start = end;
        }
    }
    Ok(ModelVector(w))
}

pub fn local_train(
    client_id: ClientId,
    global: &ModelVector,
    shard: &LabeledShard,
    cfg: &TrainingConfig,
    cpu_share: f64,
) -> Result<ClientUpdate> {
    let delta = train_weights(global, shard, cfg)?;
    Ok(ClientUpdate {
        client_id,
        delta,
        dataset_size: shard.len().max(1),
        train_time_ms: train_time_ms(cfg, shard.len(), cpu_share),
    })
}

/// Dataset-size weighted average of the updates' weight vectors.
pub fn fed_avg(updates: &[ClientUpdate]) -> Result<ModelVector> {
    let first = updates.first().ok_or(SimError::EmptyAggregation)?;
    let dim = first.delta.dim();
    let total: f64 = updates.iter().map(|u| u.dataset_size as f64).sum();
    let mut out = vec![0.0; dim];
    for u in updates {
        if u.delta.dim() != dim {
            return Err(SimError::DimensionMismatch {
                expected: dim,
                found: u.delta.dim(),
            });
        }
        let weight = u.dataset_size as f64 / total;
        for (o, d) in out.iter_mut().zip(u.delta.as_slice()) {
            *o += weight * d;
        }
    }
    Ok(ModelVector(out))
}

/// Predicted class for one sample; ties go to the lowest class index.
pub fn predict(model: &ModelVector, x: &[f64], n_classes: usize) -> usize {
    let z = logits(model.as_slice(), x, n_classes);
    let mut best = 0;
    for k in 1..z.len() {
        if z[k] > z[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate(model: &ModelVector, test: &LabeledShard) -> Result<f64> {
    if test.is_empty() {
        return Err(SimError::EmptyTestSet);
    }
    check_dim(model.as_slice(), test)?;
    let correct = (0..test.len())
        .filter(|&i| predict(model, test.row(i), test.n_classes) == test.labels[i])
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Training and evaluation backend used by the simulation loop.
pub trait Learner: Send + Sync {
    fn train(&self, client: ClientId, global: &ModelVector, shard: &LabeledShard, cfg: &TrainingConfig) -> Result<ModelVector>;

    fn evaluate(&self, model: &ModelVector, test: &LabeledShard) -> Result<f64>;
}

/// Gradient-descent learner selected by [`TrainingConfig::learner`].
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinLearner;

impl Learner for BuiltinLearner {
    fn train(&self, _client: ClientId, global: &ModelVector, shard: &LabeledShard, cfg: &TrainingConfig) -> Result<ModelVector> {
        train_weights(global, shard, cfg)
    }

    fn evaluate(&self, model: &ModelVector, test: &LabeledShard) -> Result<f64> {
        evaluate(model, test)
    }
}
