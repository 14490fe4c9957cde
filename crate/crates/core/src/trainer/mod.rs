//! Training: the pairwise logistic cosine objective, exact reverse-mode
//! gradients through both towers, an adaptive-moment optimizer, and a fully
//! deterministic loop (fixed seeded shuffles, fixed accumulation order).

mod checkpoint;

pub use checkpoint::{Checkpoint, CheckpointMeta};

use serde::{Deserialize, Serialize};

use crate::corpus::Universe;
use crate::encoder::{TokenizedText, Vocabulary};
use crate::error::{Error, Result};
use crate::nn::neg_log_sigmoid;
use crate::rng::{derive_seed_indexed, rng_from, shuffle};
use crate::sampler::TrainingSample;
use crate::tape::{NodeId, Tape};
use crate::tensor::{dot, Scalar, Tensor};
use crate::tower::{
    encode_node, register_tower, tower_node_list, ModelConfig, ModelParams, TensorRole, TowerNodes,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Train on at most this many samples (0 = all), taken in sample order.
    pub max_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(name, "must be in (0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        Ok(())
    }
}

/// A training sample with its texts tokenized for the towers.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedSample {
    pub query: TokenizedText,
    pub positives: Vec<TokenizedText>,
    pub negatives: Vec<TokenizedText>,
}

/// Pairwise logistic loss on unit vectors:
/// `sum_pos -ln s(g cos) + sum_neg -ln s(-g cos)`.
pub fn loss_value(
    query: &[f64],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    gamma: f64,
) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::EmptyInput("loss needs at least one positive".into()));
    }
    let mut total = 0.0;
    for p in positives {
        total += neg_log_sigmoid(gamma * dot(query, p));
    }
    for n in negatives {
        total += neg_log_sigmoid(-gamma * dot(query, n));
    }
    Ok(total)
}

/// Build the loss graph for a batch; returns the mean-reduced scalar node.
pub fn batch_loss_node<S: Scalar>(
    tape: &mut Tape<S>,
    query_nodes: &TowerNodes,
    keyword_nodes: &TowerNodes,
    cfg: &ModelConfig,
    batch: &[TokenizedSample],
) -> Result<NodeId> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let gamma = S::from_f64(cfg.gamma);
    let neg_gamma = S::from_f64(-cfg.gamma);
    let mut sample_losses = Vec::with_capacity(batch.len());
    for sample in batch {
        if sample.positives.is_empty() {
            return Err(Error::EmptyInput("sample has no positives".into()));
        }
        let vq = encode_node(tape, query_nodes, cfg, &sample.query)?;
        let mut terms = Vec::with_capacity(sample.positives.len() + sample.negatives.len());
        for pos in &sample.positives {
            let vb = encode_node(tape, keyword_nodes, cfg, pos)?;
            let c = tape.dot(vq, vb);
            let s = tape.scale(c, gamma);
            terms.push(tape.neg_log_sigmoid(s));
        }
        for neg in &sample.negatives {
            let vb = encode_node(tape, keyword_nodes, cfg, neg)?;
            let c = tape.dot(vq, vb);
            let s = tape.scale(c, neg_gamma);
            terms.push(tape.neg_log_sigmoid(s));
        }
        sample_losses.push(tape.sum(terms));
    }
    let total = tape.sum(sample_losses);
    Ok(tape.scale(total, S::from_f64(1.0 / batch.len() as f64)))
}

/// Loss and per-tensor gradients for a batch, in [`ModelParams::visit`]
/// order. The f64 instantiation is what finite-difference verification runs.
pub fn batch_gradients<S: Scalar>(
    model: &ModelParams<S>,
    batch: &[TokenizedSample],
) -> Result<(f64, Vec<(String, Tensor<S>)>)> {
    let mut tape = Tape::new();
    let qn = register_tower(&mut tape, &model.query_tower);
    let kn = register_tower(&mut tape, &model.keyword_tower);
    let loss = batch_loss_node(&mut tape, &qn, &kn, &model.config, batch)?;
    let loss_value = tape.value(loss).item().to_f64();
    let grads = tape.backward(loss);
    let nodes: Vec<NodeId> = tower_node_list(&qn)
        .into_iter()
        .chain(tower_node_list(&kn))
        .collect();
    let named = model.visit();
    debug_assert_eq!(nodes.len(), named.len());
    let mut out = Vec::with_capacity(nodes.len());
    for ((name, tensor, _), node) in named.into_iter().zip(nodes) {
        let grad = match grads.get(node) {
            Some(g) => g.clone(),
            None => Tensor::zeros(tensor.shape()),
        };
        out.push((name, grad));
    }
    Ok((loss_value, out))
}

/// Forward-only batch loss (the finite-difference probe).
pub fn batch_loss_value<S: Scalar>(
    model: &ModelParams<S>,
    batch: &[TokenizedSample],
) -> Result<f64> {
    let mut tape = Tape::new();
    let qn = register_tower(&mut tape, &model.query_tower);
    let kn = register_tower(&mut tape, &model.keyword_tower);
    let loss = batch_loss_node(&mut tape, &qn, &kn, &model.config, batch)?;
    Ok(tape.value(loss).item().to_f64())
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl Adam {
    fn new(model: &ModelParams<f32>, cfg: &TrainConfig) -> Self {
        let shapes: Vec<Vec<usize>> = model
            .visit()
            .iter()
            .map(|(_, t, _)| t.shape().to_vec())
            .collect();
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    fn apply(&mut self, model: &mut ModelParams<f32>, grads: &[(String, Tensor<f32>)]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (name, param, role)) in model.visit_mut().into_iter().enumerate() {
            debug_assert_eq!(name, grads[i].0);
            let grad = &grads[i].1;
            // PAD embedding rows (row 0) are pinned to zero, never updated.
            let skip = match role {
                TensorRole::Embedding => param.cols(),
                TensorRole::Dense => 0,
            };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..param.len() {
                if j < skip {
                    continue;
                }
                let g = f64::from(grad.data()[j]);
                let mj = self.beta1 * m.data()[j] + (1.0 - self.beta1) * g;
                let vj = self.beta2 * v.data()[j] + (1.0 - self.beta2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let update = self.lr * (mj / bc1) / ((vj / bc2).sqrt() + self.epsilon);
                let p = f64::from(param.data()[j]) - update;
                param.data_mut()[j] = p as f32;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Tokenize training samples against the model's vocabulary.
pub fn tokenize_samples(
    model: &ModelParams<f32>,
    samples: &[TrainingSample],
    universe: &Universe,
) -> Result<Vec<TokenizedSample>> {
    samples
        .iter()
        .map(|s| {
            Ok(TokenizedSample {
                query: model.tokenize(&universe.query_surface(s.query))?,
                positives: s
                    .positives
                    .iter()
                    .map(|k| model.tokenize(&universe.keyword_surface(*k)))
                    .collect::<Result<_>>()?,
                negatives: s
                    .negatives
                    .iter()
                    .map(|k| model.tokenize(&universe.keyword_surface(*k)))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Train a model from scratch. Deterministic: the same inputs produce a
/// byte-identical checkpoint. `on_epoch` sees a snapshot after every epoch.
pub fn train(
    samples: &[TrainingSample],
    universe: &Universe,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&Checkpoint, &EpochStats) -> Result<()>,
) -> Result<(Checkpoint, Vec<EpochStats>)> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let vocab = Vocabulary::from_words(universe.words.iter().map(|w| w.surface.as_str()));
    let mut model = ModelParams::<f32>::init(*model_cfg, vocab, seed)?;

    let kept = if train_cfg.max_samples > 0 {
        &samples[..samples.len().min(train_cfg.max_samples)]
    } else {
        samples
    };
    let tokenized = tokenize_samples(&model, kept, universe)?;

    let meta = |epochs: usize| CheckpointMeta {
        model_config: *model_cfg,
        train_config: train_cfg.clone(),
        universe_fingerprint: universe.fingerprint(),
        trained_epochs: epochs,
    };

    let mut adam = Adam::new(&model, train_cfg);
    let mut trace = Vec::with_capacity(train_cfg.epochs);
    let mut order: Vec<usize> = (0..tokenized.len()).collect();
    for epoch in 1..=train_cfg.epochs {
        let mut rng = rng_from(derive_seed_indexed(seed, "epoch", epoch as u64), "shuffle");
        shuffle(&mut rng, &mut order);
        let mut loss_sum = 0.0;
        for (batch_idx, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<TokenizedSample> =
                chunk.iter().map(|i| tokenized[*i].clone()).collect();
            let (loss, grads) = batch_gradients(&model, &batch).map_err(|e| match e {
                Error::Numerical(msg) => Error::Numerical(format!(
                    "{msg} at epoch {epoch}, batch {batch_idx}"
                )),
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss diverged at epoch {epoch}, batch {batch_idx}"
                )));
            }
            for (name, grad) in &grads {
                if !grad.all_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient for {name} at epoch {epoch}, batch {batch_idx}"
                    )));
                }
            }
            adam.apply(&mut model, &grads);
            loss_sum += loss * chunk.len() as f64;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / tokenized.len() as f64,
        };
        trace.push(stats);
        let snapshot = Checkpoint {
            model: model.clone(),
            meta: meta(epoch),
        };
        on_epoch(&snapshot, &stats)?;
    }
    let checkpoint = Checkpoint {
        model,
        meta: meta(train_cfg.epochs),
    };
    Ok((checkpoint, trace))
}

/// Finite-difference verification of [`batch_gradients`] in f64.
pub struct FdReport {
    /// (tensor name, max relative error over its elements)
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

pub fn finite_difference_check(
    model: &ModelParams<f64>,
    batch: &[TokenizedSample],
    eps: f64,
) -> Result<FdReport> {
    let (_, analytic) = batch_gradients(model, batch)?;
    let mut probe = model.clone();
    let n_tensors = analytic.len();
    let mut per_tensor = Vec::with_capacity(n_tensors);
    for ti in 0..n_tensors {
        let (name, grad) = &analytic[ti];
        let mut worst = 0.0f64;
        for j in 0..grad.len() {
            let original = probe.visit_mut()[ti].1.data()[j];
            probe.visit_mut()[ti].1.data_mut()[j] = original + eps;
            let plus = batch_loss_value(&probe, batch)?;
            probe.visit_mut()[ti].1.data_mut()[j] = original - eps;
            let minus = batch_loss_value(&probe, batch)?;
            probe.visit_mut()[ti].1.data_mut()[j] = original;
            let fd = (plus - minus) / (2.0 * eps);
            let a = grad.data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
        }
        per_tensor.push((name.clone(), worst));
    }
    let max_rel_error = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(FdReport {
        per_tensor,
        max_rel_error,
    })
}
