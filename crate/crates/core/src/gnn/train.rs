//! Full-batch training loop and model checkpoints.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::metrics::evaluate;
use super::model::{backward, cross_entropy, forward, model_forward, ModelConfig, Params};
use crate::error::{Error, Result};
use crate::features::{DatasetSplit, RiskClass};
use crate::spatial_graph::ProximityGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with β = (0.9, 0.999), ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Stop after this many epochs without a validation F1 improvement.
    pub patience: Option<usize>,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            seed: 7,
            patience: None,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::arg("epochs must be at least 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::arg("learning_rate must be a finite nonnegative number"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::arg("weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation macro F1 seen.
    pub params: Params,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    /// Loss of the parameters left after the last update.
    pub final_train_loss: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn initial_train_loss(&self) -> f64 {
        self.history.first().map_or(f64::NAN, |r| r.train_loss)
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn step(params: &mut Params, grads: &Params, cfg: &TrainConfig, adam: &mut AdamState) {
    let lr = cfg.learning_rate;
    let wd = cfg.weight_decay;
    adam.t += 1;
    let bc1 = 1.0 - BETA1.powi(adam.t);
    let bc2 = 1.0 - BETA2.powi(adam.t);
    let mut off = 0;
    let grad_tensors = grads.tensors();
    for (p, (_, _, g)) in params.tensors_mut().into_iter().zip(grad_tensors) {
        for (k, (w, &gk)) in p.iter_mut().zip(g).enumerate() {
            let gk = gk + wd * *w;
            match cfg.optimizer {
                Optimizer::Sgd => *w -= lr * gk,
                Optimizer::Adam => {
                    let i = off + k;
                    adam.m[i] = BETA1 * adam.m[i] + (1.0 - BETA1) * gk;
                    adam.v[i] = BETA2 * adam.v[i] + (1.0 - BETA2) * gk * gk;
                    let m_hat = adam.m[i] / bc1;
                    let v_hat = adam.v[i] / bc2;
                    *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        off += p.len();
    }
}

fn macro_f1_on(probs: &Matrix, labels: &[RiskClass], idx: &[usize]) -> Result<f64> {
    let pred: Vec<RiskClass> = probs
        .select_rows(idx)
        .argmax_rows()
        .into_iter()
        .map(|c| RiskClass::from_index(c).expect("3 classes"))
        .collect();
    let truth: Vec<RiskClass> = idx.iter().map(|&i| labels[i]).collect();
    Ok(evaluate(&pred, &truth)?.macro_f1)
}

/// Full-batch training from a Glorot initialization seeded by `train_config.seed`.
pub fn train(
    config: &ModelConfig,
    train_config: &TrainConfig,
    x: &Matrix,
    g: &ProximityGraph,
    labels: &[RiskClass],
    split: &DatasetSplit,
) -> Result<TrainOutcome> {
    config.validate()?;
    let params = Params::init(config, train_config.seed)?;
    train_from(config, train_config, params, x, g, labels, split)
}

/// Like [`train`] but starting from the given parameters.
pub fn train_from(
    config: &ModelConfig,
    train_config: &TrainConfig,
    mut params: Params,
    x: &Matrix,
    g: &ProximityGraph,
    labels: &[RiskClass],
    split: &DatasetSplit,
) -> Result<TrainOutcome> {
    train_config.validate()?;
    params.check(config)?;
    if split.train.is_empty() {
        return Err(Error::arg("training split is empty"));
    }
    if labels.len() != x.rows() {
        return Err(Error::shape("labels and feature rows differ in length"));
    }
    // Model selection falls back to the training nodes when there is no validation split.
    let select_on: &[usize] = if split.val.is_empty() {
        &split.train
    } else {
        &split.val
    };

    let n_params = params.len();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(train_config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let stochastic = config.dropout_rate > 0.0;

    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut since_best = 0usize;

    for epoch in 1..=train_config.epochs {
        let out = forward(config, &params, x, g, stochastic.then_some(&mut dropout_rng))?;
        let (loss, d_logits) = cross_entropy(&out.logits, labels, &split.train)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch, loss });
        }
        let probs = if stochastic {
            model_forward(config, &params, x, g)?.probs
        } else {
            out.probs.clone()
        };
        let val_f1 = macro_f1_on(&probs, labels, select_on)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_macro_f1: val_f1,
        });
        // Later epochs win ties.
        if val_f1 > best.2 {
            since_best = 0;
        } else {
            since_best += 1;
        }
        if val_f1 >= best.2 {
            best = (params.clone(), epoch, val_f1);
        }
        if train_config.patience.is_some_and(|p| since_best >= p) {
            log::info!("early stop at epoch {epoch}, best epoch {}", best.1);
            break;
        }
        let grads = backward(config, &params, &out.cache, &d_logits)?;
        step(&mut params, &grads, train_config, &mut adam);
    }

    let out = model_forward(config, &params, x, g)?;
    let (final_train_loss, _) = cross_entropy(&out.logits, labels, &split.train)?;
    if !final_train_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: history.len() + 1,
            loss: final_train_loss,
        });
    }
    let final_f1 = macro_f1_on(&out.probs, labels, select_on)?;
    if final_f1 >= best.2 {
        best = (params, history.len() + 1, final_f1);
    }

    Ok(TrainOutcome {
        params: best.0,
        best_epoch: best.1,
        best_val_f1: best.2,
        final_train_loss,
        history,
    })
}

/// `epoch,train_loss,val_macro_f1` lines with a header.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,val_macro_f1")?;
    for r in history {
        writeln!(out, "{},{},{}", r.epoch, r.train_loss, r.val_macro_f1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Serialized model: configuration plus row-major parameter arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub parameter_count: usize,
    pub parameters: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(config: &ModelConfig, params: &Params) -> Self {
        Checkpoint {
            config: config.clone(),
            parameter_count: params.len(),
            parameters: params
                .tensors()
                .into_iter()
                .map(|(name, shape, values)| NamedTensor {
                    name,
                    shape,
                    values: values.to_vec(),
                })
                .collect(),
        }
    }

    /// Rebuild parameters, checking names and shapes against the config.
    pub fn params(&self) -> Result<Params> {
        self.config.validate()?;
        let mut p = Params::zeros(&self.config);
        let expected = p.tensors().into_iter().map(|(n, s, _)| (n, s)).collect::<Vec<_>>();
        if expected.len() != self.parameters.len() {
            return Err(Error::shape("checkpoint tensor count does not match its config"));
        }
        for ((name, shape), t) in expected.iter().zip(&self.parameters) {
            if *name != t.name || *shape != t.shape {
                return Err(Error::shape(format!(
                    "checkpoint tensor `{}` {:?} where `{name}` {shape:?} was expected",
                    t.name, t.shape
                )));
            }
            if t.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse(format!("non-finite value in `{}`", t.name)));
            }
        }
        let flat: Vec<f64> = self.parameters.iter().flat_map(|t| t.values.iter().copied()).collect();
        p.set_flat(&flat)?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
