//! Spatial risk classifier: GCN → multi-head GAT → single-head GAT → dense → 3 logits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{gat_head_backward, gat_head_forward, normalized_aggregate, relu, AttentionRow, GatHead, GatHeadCache};
use super::matrix::{log_sum_exp, softmax_rows, Matrix};
use crate::error::{Error, Result};
use crate::features::{RiskClass, FEATURE_DIM};
use crate::spatial_graph::ProximityGraph;

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub gcn_hidden: usize,
    pub gat_heads: usize,
    pub gat_head_dim: usize,
    pub gat2_out: usize,
    pub head_hidden: usize,
    pub n_classes: usize,
    pub leaky_relu_slope: f64,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_dim: FEATURE_DIM,
            gcn_hidden: 128,
            gat_heads: 4,
            gat_head_dim: 32,
            gat2_out: 64,
            head_hidden: 64,
            n_classes: N_CLASSES,
            leaky_relu_slope: 0.2,
            dropout_rate: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_dim,
            self.gcn_hidden,
            self.gat_heads,
            self.gat_head_dim,
            self.gat2_out,
            self.head_hidden,
        ];
        if dims.contains(&0) {
            return Err(Error::arg("model dimensions must be at least 1"));
        }
        if self.gat_heads * self.gat_head_dim != self.gcn_hidden {
            return Err(Error::arg(format!(
                "gat_heads ({}) x gat_head_dim ({}) must equal gcn_hidden ({})",
                self.gat_heads, self.gat_head_dim, self.gcn_hidden
            )));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::arg("the classifier has exactly 3 classes"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg("dropout_rate must lie in [0, 1)"));
        }
        if !(self.leaky_relu_slope >= 0.0) {
            return Err(Error::arg("leaky_relu_slope must be nonnegative"));
        }
        Ok(())
    }
}

/// Weights plus bias of a fully connected layer.
pub fn linear_param_count(input: usize, output: usize) -> usize {
    input * output + output
}

/// Projection, two attention vectors and bias of one GAT head.
fn head_param_count(input: usize, output: usize) -> usize {
    input * output + 3 * output
}

/// Number of trainable scalars for `config`, derived from layer sizes.
pub fn param_count(config: &ModelConfig) -> usize {
    let gcn = linear_param_count(config.in_dim, config.gcn_hidden);
    let gat1 = config.gat_heads * head_param_count(config.gcn_hidden, config.gat_head_dim);
    let gat2 = head_param_count(config.gat_heads * config.gat_head_dim, config.gat2_out);
    let dense = linear_param_count(config.gat2_out, config.head_hidden);
    let out = linear_param_count(config.head_hidden, config.n_classes);
    gcn + gat1 + gat2 + dense + out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub gcn_weight: Matrix,
    pub gcn_bias: Vec<f64>,
    pub gat1: Vec<GatHead>,
    pub gat2: GatHead,
    pub dense_weight: Matrix,
    pub dense_bias: Vec<f64>,
    pub out_weight: Matrix,
    pub out_bias: Vec<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, values: &mut [f64]) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in values {
        *v = rng.gen_range(-limit..=limit);
    }
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let concat = config.gat_heads * config.gat_head_dim;
        Params {
            gcn_weight: Matrix::zeros(config.in_dim, config.gcn_hidden),
            gcn_bias: vec![0.0; config.gcn_hidden],
            gat1: (0..config.gat_heads)
                .map(|_| GatHead::zeros(config.gcn_hidden, config.gat_head_dim))
                .collect(),
            gat2: GatHead::zeros(concat, config.gat2_out),
            dense_weight: Matrix::zeros(config.gat2_out, config.head_hidden),
            dense_bias: vec![0.0; config.head_hidden],
            out_weight: Matrix::zeros(config.head_hidden, config.n_classes),
            out_bias: vec![0.0; config.n_classes],
        }
    }

    /// Glorot-uniform weights and attention vectors, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Params::zeros(config);
        glorot(&mut rng, config.in_dim, config.gcn_hidden, p.gcn_weight.as_mut_slice());
        let init_head = |rng: &mut ChaCha8Rng, h: &mut GatHead| {
            let (i, o) = h.weight.shape();
            glorot(rng, i, o, h.weight.as_mut_slice());
            glorot(rng, o, 1, &mut h.att_src);
            glorot(rng, o, 1, &mut h.att_dst);
        };
        for h in &mut p.gat1 {
            init_head(&mut rng, h);
        }
        init_head(&mut rng, &mut p.gat2);
        glorot(&mut rng, config.gat2_out, config.head_hidden, p.dense_weight.as_mut_slice());
        glorot(&mut rng, config.head_hidden, config.n_classes, p.out_weight.as_mut_slice());
        Ok(p)
    }

    /// Every parameter tensor as `(name, shape, values)` in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        let m = |x: &Matrix| vec![x.rows(), x.cols()];
        out.push(("gcn.weight".into(), m(&self.gcn_weight), self.gcn_weight.as_slice()));
        out.push(("gcn.bias".into(), vec![self.gcn_bias.len()], &self.gcn_bias));
        let heads = self
            .gat1
            .iter()
            .enumerate()
            .map(|(k, h)| (format!("gat1.head{k}"), h))
            .chain(std::iter::once(("gat2.head0".to_string(), &self.gat2)));
        for (prefix, h) in heads {
            out.push((format!("{prefix}.weight"), m(&h.weight), h.weight.as_slice()));
            out.push((format!("{prefix}.att_src"), vec![h.att_src.len()], &h.att_src));
            out.push((format!("{prefix}.att_dst"), vec![h.att_dst.len()], &h.att_dst));
            out.push((format!("{prefix}.bias"), vec![h.bias.len()], &h.bias));
        }
        out.push(("dense.weight".into(), m(&self.dense_weight), self.dense_weight.as_slice()));
        out.push(("dense.bias".into(), vec![self.dense_bias.len()], &self.dense_bias));
        out.push(("out.weight".into(), m(&self.out_weight), self.out_weight.as_slice()));
        out.push(("out.bias".into(), vec![self.out_bias.len()], &self.out_bias));
        out
    }

    /// Mutable views in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.gcn_weight.as_mut_slice(), &mut self.gcn_bias];
        for h in self.gat1.iter_mut().chain(std::iter::once(&mut self.gat2)) {
            out.push(h.weight.as_mut_slice());
            out.push(&mut h.att_src);
            out.push(&mut h.att_dst);
            out.push(&mut h.bias);
        }
        out.push(self.dense_weight.as_mut_slice());
        out.push(&mut self.dense_bias);
        out.push(self.out_weight.as_mut_slice());
        out.push(&mut self.out_bias);
        out
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().into_iter().flat_map(|t| t.2.to_vec()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.len()
            )));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    /// Check tensor shapes against `config`.
    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let expect = Params::zeros(config);
        let a: Vec<Vec<usize>> = self.tensors().into_iter().map(|t| t.1).collect();
        let b: Vec<Vec<usize>> = expect.tensors().into_iter().map(|t| t.1).collect();
        if a != b {
            return Err(Error::shape("parameters do not match the model configuration"));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    aggregated: Matrix,
    gcn_pre: Matrix,
    gcn_in_gat: Matrix,
    gat1: Vec<GatHeadCache>,
    gat1_in_gat2: Matrix,
    gat2: GatHeadCache,
    gat2_in_dense: Matrix,
    dense_pre: Matrix,
    dense_in_out: Matrix,
    masks: [Option<Matrix>; 4],
}

#[derive(Debug, Clone)]
pub struct ModelOutput {
    pub logits: Matrix,
    pub probs: Matrix,
    pub cache: ForwardCache,
}

impl ModelOutput {
    pub fn predictions(&self) -> Vec<RiskClass> {
        self.probs
            .argmax_rows()
            .into_iter()
            .map(|i| RiskClass::from_index(i).expect("3 classes"))
            .collect()
    }

    /// Max softmax probability per node.
    pub fn confidence(&self) -> Vec<f64> {
        (0..self.probs.rows())
            .map(|i| self.probs.row(i).iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Attention rows of the first GAT layer, one list per head.
    pub fn gat1_attention(&self) -> Vec<&[AttentionRow]> {
        self.cache.gat1.iter().map(|c| c.attention.as_slice()).collect()
    }

    pub fn gat2_attention(&self) -> &[AttentionRow] {
        &self.cache.gat2.attention
    }
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 - rate;
    let data = (0..shape.0 * shape.1)
        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    Matrix::from_vec(shape.0, shape.1, data).expect("mask shape")
}

/// Run the model. With `dropout_rng` set and a nonzero rate, inverted dropout
/// follows every hidden activation.
pub fn forward(
    config: &ModelConfig,
    params: &Params,
    x: &Matrix,
    g: &ProximityGraph,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ModelOutput> {
    if x.cols() != config.in_dim {
        return Err(Error::shape(format!(
            "model expects {} input features, got {}",
            config.in_dim,
            x.cols()
        )));
    }
    let slope = config.leaky_relu_slope;
    let mut masks: [Option<Matrix>; 4] = [None, None, None, None];
    let mut drop = |m: Matrix, slot: usize| -> Result<Matrix> {
        match dropout_rng.as_deref_mut() {
            Some(rng) if config.dropout_rate > 0.0 => {
                let mask = dropout_mask(m.shape(), config.dropout_rate, rng);
                let out = m.hadamard(&mask)?;
                masks[slot] = Some(mask);
                Ok(out)
            }
            _ => Ok(m),
        }
    };

    let aggregated = normalized_aggregate(x, g)?;
    let mut gcn_pre = aggregated.matmul(&params.gcn_weight)?;
    gcn_pre.add_row(&params.gcn_bias)?;
    let gcn_in_gat = drop(gcn_pre.map(relu), 0)?;

    let mut head_outs = Vec::with_capacity(params.gat1.len());
    let mut gat1 = Vec::with_capacity(params.gat1.len());
    for head in &params.gat1 {
        let (o, c) = gat_head_forward(&gcn_in_gat, g, head, slope)?;
        head_outs.push(o);
        gat1.push(c);
    }
    let gat1_in_gat2 = drop(Matrix::hconcat(&head_outs)?, 1)?;

    let (gat2_out, gat2) = gat_head_forward(&gat1_in_gat2, g, &params.gat2, slope)?;
    let gat2_in_dense = drop(gat2_out, 2)?;

    let mut dense_pre = gat2_in_dense.matmul(&params.dense_weight)?;
    dense_pre.add_row(&params.dense_bias)?;
    let dense_in_out = drop(dense_pre.map(relu), 3)?;

    let mut logits = dense_in_out.matmul(&params.out_weight)?;
    logits.add_row(&params.out_bias)?;
    let probs = softmax_rows(&logits);

    Ok(ModelOutput {
        logits,
        probs,
        cache: ForwardCache {
            aggregated,
            gcn_pre,
            gcn_in_gat,
            gat1,
            gat1_in_gat2,
            gat2,
            gat2_in_dense,
            dense_pre,
            dense_in_out,
            masks,
        },
    })
}

/// Deterministic inference: no dropout.
pub fn model_forward(
    config: &ModelConfig,
    params: &Params,
    x: &Matrix,
    g: &ProximityGraph,
) -> Result<ModelOutput> {
    forward(config, params, x, g, None)
}

fn apply_mask(grad: Matrix, mask: &Option<Matrix>) -> Result<Matrix> {
    match mask {
        Some(m) => grad.hadamard(m),
        None => Ok(grad),
    }
}

fn relu_backward(grad: &Matrix, pre: &Matrix) -> Result<Matrix> {
    grad.hadamard(&pre.map(|v| if v > 0.0 { 1.0 } else { 0.0 }))
}

/// Reverse-mode pass from `d_logits` to every parameter.
pub fn backward(
    config: &ModelConfig,
    params: &Params,
    cache: &ForwardCache,
    d_logits: &Matrix,
) -> Result<Params> {
    let slope = config.leaky_relu_slope;
    let mut grads = Params::zeros(config);

    grads.out_weight = cache.dense_in_out.t_matmul(d_logits)?;
    grads.out_bias = d_logits.sum_rows();
    let d_dense_act = apply_mask(d_logits.matmul_t(&params.out_weight)?, &cache.masks[3])?;

    let d_dense_pre = relu_backward(&d_dense_act, &cache.dense_pre)?;
    grads.dense_weight = cache.gat2_in_dense.t_matmul(&d_dense_pre)?;
    grads.dense_bias = d_dense_pre.sum_rows();
    let d_gat2_out = apply_mask(d_dense_pre.matmul_t(&params.dense_weight)?, &cache.masks[2])?;

    let (g2, d_gat1_concat) =
        gat_head_backward(&cache.gat1_in_gat2, &params.gat2, &cache.gat2, &d_gat2_out, slope)?;
    grads.gat2 = g2;
    let d_gat1_concat = apply_mask(d_gat1_concat, &cache.masks[1])?;

    let width = config.gat_head_dim;
    let mut d_gcn_act = Matrix::zeros(cache.gcn_in_gat.rows(), cache.gcn_in_gat.cols());
    for (k, (head, hc)) in params.gat1.iter().zip(&cache.gat1).enumerate() {
        let d_head = d_gat1_concat.column_block(k * width, width);
        let (gk, dh) = gat_head_backward(&cache.gcn_in_gat, head, hc, &d_head, slope)?;
        grads.gat1[k] = gk;
        for (a, b) in d_gcn_act.as_mut_slice().iter_mut().zip(dh.as_slice()) {
            *a += b;
        }
    }
    let d_gcn_act = apply_mask(d_gcn_act, &cache.masks[0])?;
    let d_gcn_pre = relu_backward(&d_gcn_act, &cache.gcn_pre)?;
    grads.gcn_weight = cache.aggregated.t_matmul(&d_gcn_pre)?;
    grads.gcn_bias = d_gcn_pre.sum_rows();
    Ok(grads)
}

/// Mean cross-entropy over `mask` and `∂loss/∂logits` (zero outside the mask).
pub fn cross_entropy(logits: &Matrix, labels: &[RiskClass], mask: &[usize]) -> Result<(f64, Matrix)> {
    if mask.is_empty() {
        return Err(Error::arg("loss mask is empty"));
    }
    if labels.len() != logits.rows() {
        return Err(Error::shape(format!(
            "{} labels for {} nodes",
            labels.len(),
            logits.rows()
        )));
    }
    let scale = 1.0 / mask.len() as f64;
    let probs = softmax_rows(logits);
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for &i in mask {
        if i >= logits.rows() {
            return Err(Error::arg(format!("mask index {i} out of range")));
        }
        let y = labels[i].index();
        let row = logits.row(i);
        loss += log_sum_exp(row) - row[y];
        let g = grad.row_mut(i);
        for (c, gv) in g.iter_mut().enumerate() {
            *gv += scale * (probs[(i, c)] - if c == y { 1.0 } else { 0.0 });
        }
    }
    Ok((loss * scale, grad))
}

/// Loss over `mask` and gradients for every parameter.
pub fn loss_and_grads(
    config: &ModelConfig,
    params: &Params,
    x: &Matrix,
    g: &ProximityGraph,
    labels: &[RiskClass],
    mask: &[usize],
) -> Result<(f64, Params)> {
    if mask.is_empty() {
        return Err(Error::arg("loss mask is empty"));
    }
    let out = forward(config, params, x, g, None)?;
    let (loss, d_logits) = cross_entropy(&out.logits, labels, mask)?;
    let grads = backward(config, params, &out.cache, &d_logits)?;
    Ok((loss, grads))
}
