//! GCN and GAT layers with hand-written backward passes.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, softmax_in_place, Matrix};
use crate::error::{Error, Result};
use crate::spatial_graph::ProximityGraph;

fn check_nodes(x: &Matrix, g: &ProximityGraph) -> Result<()> {
    if x.rows() != g.node_count() {
        return Err(Error::shape(format!(
            "{} feature rows for a graph of {} nodes",
            x.rows(),
            g.node_count()
        )));
    }
    Ok(())
}

/// `D̂^(-1/2) (A + I) D̂^(-1/2) · X` where `D̂` counts the self-loop.
pub fn normalized_aggregate(x: &Matrix, g: &ProximityGraph) -> Result<Matrix> {
    check_nodes(x, g)?;
    let inv_sqrt: Vec<f64> = (0..g.node_count())
        .map(|i| 1.0 / ((g.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let ci = inv_sqrt[i];
        let row = out.row_mut(i);
        for (o, &v) in row.iter_mut().zip(x.row(i)) {
            *o += ci * ci * v;
        }
        for &j in g.neighbors(i) {
            let c = ci * inv_sqrt[j];
            for (o, &v) in row.iter_mut().zip(x.row(j)) {
                *o += c * v;
            }
        }
    }
    Ok(out)
}

pub fn relu(v: f64) -> f64 {
    v.max(0.0)
}

pub fn elu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v.exp_m1()
    }
}

fn elu_grad(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        v.exp()
    }
}

fn leaky_relu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

/// `ReLU(Â X W + b)`.
pub fn gcn_forward(x: &Matrix, g: &ProximityGraph, w: &Matrix, b: &[f64]) -> Result<Matrix> {
    let mut y = normalized_aggregate(x, g)?.matmul(w)?;
    y.add_row(b)?;
    Ok(y.map(relu))
}

/// Parameters of one attention head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatHead {
    /// `in × out` projection.
    pub weight: Matrix,
    /// Attention vector applied to the receiving node's projection.
    pub att_src: Vec<f64>,
    /// Attention vector applied to the sending node's projection.
    pub att_dst: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GatHead {
    pub fn zeros(input: usize, output: usize) -> Self {
        GatHead {
            weight: Matrix::zeros(input, output),
            att_src: vec![0.0; output],
            att_dst: vec![0.0; output],
            bias: vec![0.0; output],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    fn check(&self, h: &Matrix) -> Result<()> {
        let d = self.weight.cols();
        if h.cols() != self.weight.rows() {
            return Err(Error::shape(format!(
                "GAT head expects {} input features, got {}",
                self.weight.rows(),
                h.cols()
            )));
        }
        if self.att_src.len() != d || self.att_dst.len() != d || self.bias.len() != d {
            return Err(Error::shape("GAT attention/bias length differs from head width"));
        }
        Ok(())
    }
}

/// One receiving node's attention: `(j, pre-activation logit, α_ij)` over
/// `N(i) ∪ {i}` in ascending `j`.
pub type AttentionRow = Vec<(usize, f64, f64)>;

#[derive(Debug, Clone)]
pub struct GatHeadCache {
    z: Matrix,
    u: Matrix,
    pub attention: Vec<AttentionRow>,
}

fn neighborhood(g: &ProximityGraph, i: usize) -> impl Iterator<Item = usize> + '_ {
    let nb = g.neighbors(i);
    let split = nb.partition_point(|&j| j < i);
    nb[..split]
        .iter()
        .copied()
        .chain(std::iter::once(i))
        .chain(nb[split..].iter().copied())
}

/// Single head: `ELU(Σ_j α_ij W h_j + b)` with
/// `α_i· = softmax_j LeakyReLU(a_srcᵀ W h_i + a_dstᵀ W h_j)` over `N(i) ∪ {i}`.
pub fn gat_head_forward(
    h: &Matrix,
    g: &ProximityGraph,
    p: &GatHead,
    slope: f64,
) -> Result<(Matrix, GatHeadCache)> {
    check_nodes(h, g)?;
    p.check(h)?;
    let n = h.rows();
    let z = h.matmul(&p.weight)?;
    let s: Vec<f64> = (0..n).map(|i| dot(&p.att_src, z.row(i))).collect();
    let t: Vec<f64> = (0..n).map(|j| dot(&p.att_dst, z.row(j))).collect();

    let d = p.out_dim();
    let mut u = Matrix::zeros(n, d);
    let mut attention = Vec::with_capacity(n);
    for i in 0..n {
        let members: Vec<usize> = neighborhood(g, i).collect();
        let pre: Vec<f64> = members.iter().map(|&j| s[i] + t[j]).collect();
        let mut alpha: Vec<f64> = pre.iter().map(|&e| leaky_relu(e, slope)).collect();
        softmax_in_place(&mut alpha);
        let urow = u.row_mut(i);
        for (&j, &a) in members.iter().zip(&alpha) {
            for (o, &zv) in urow.iter_mut().zip(z.row(j)) {
                *o += a * zv;
            }
        }
        for (o, b) in urow.iter_mut().zip(&p.bias) {
            *o += b;
        }
        attention.push(
            members
                .into_iter()
                .zip(pre)
                .zip(alpha)
                .map(|((j, e), a)| (j, e, a))
                .collect(),
        );
    }
    let out = u.map(elu);
    Ok((out, GatHeadCache { z, u, attention }))
}

/// Gradients of one head plus the gradient with respect to its input.
pub fn gat_head_backward(
    h: &Matrix,
    p: &GatHead,
    cache: &GatHeadCache,
    d_out: &Matrix,
    slope: f64,
) -> Result<(GatHead, Matrix)> {
    let n = h.rows();
    let d = p.out_dim();
    let du = d_out.hadamard(&cache.u.map(elu_grad))?;
    let mut dz = Matrix::zeros(n, d);
    let mut ds = vec![0.0; n];
    let mut dt = vec![0.0; n];

    for (i, row) in cache.attention.iter().enumerate() {
        let du_i = du.row(i);
        // dL/dα_ij = du_i · z_j
        let dalpha: Vec<f64> = row.iter().map(|&(j, _, _)| dot(du_i, cache.z.row(j))).collect();
        let weighted: f64 = row.iter().zip(&dalpha).map(|(&(_, _, a), &g)| a * g).sum();
        for (&(j, pre, a), &g) in row.iter().zip(&dalpha) {
            for (o, &v) in dz.row_mut(j).iter_mut().zip(du_i) {
                *o += a * v;
            }
            let de = a * (g - weighted);
            let dpre = if pre > 0.0 { de } else { slope * de };
            ds[i] += dpre;
            dt[j] += dpre;
        }
    }

    let mut grad = GatHead::zeros(p.weight.rows(), d);
    for i in 0..n {
        let zi = cache.z.row(i);
        for k in 0..d {
            grad.att_src[k] += ds[i] * zi[k];
            grad.att_dst[k] += dt[i] * zi[k];
        }
        let dzi = dz.row_mut(i);
        for k in 0..d {
            dzi[k] += ds[i] * p.att_src[k] + dt[i] * p.att_dst[k];
        }
    }
    grad.bias = du.sum_rows();
    grad.weight = h.t_matmul(&dz)?;
    let dh = dz.matmul_t(&p.weight)?;
    Ok((grad, dh))
}

/// Multi-head GAT layer; head outputs are concatenated.
pub fn gat_forward(
    h: &Matrix,
    g: &ProximityGraph,
    heads: &[GatHead],
    slope: f64,
) -> Result<(Matrix, Vec<GatHeadCache>)> {
    let mut outs = Vec::with_capacity(heads.len());
    let mut caches = Vec::with_capacity(heads.len());
    for p in heads {
        let (o, c) = gat_head_forward(h, g, p, slope)?;
        outs.push(o);
        caches.push(c);
    }
    Ok((Matrix::hconcat(&outs)?, caches))
}
