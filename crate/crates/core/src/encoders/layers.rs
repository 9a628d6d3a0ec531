//! Individual message-passing layers, recorded on a tape.

use std::sync::Arc;

use rand::seq::index::sample;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng;
use crate::tensor::{CsrMatrix, Tensor};

/// LeakyReLU slope inside attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

pub fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => x,
    }
}

/// Directed edge list as parallel `dst`/`src` index arrays, sorted by `dst`.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub n: usize,
    pub dst: Arc<Vec<usize>>,
    pub src: Arc<Vec<usize>>,
}

impl EdgeIndex {
    /// Both directions of every edge, plus `(i, i)` when `self_loops`.
    pub fn from_graph(g: &Graph, self_loops: bool) -> Self {
        let mut dst = Vec::with_capacity(2 * g.num_edges() + g.n());
        let mut src = Vec::with_capacity(dst.capacity());
        for i in 0..g.n() {
            if self_loops {
                dst.push(i);
                src.push(i);
            }
            for &j in g.neighbors(i) {
                dst.push(i);
                src.push(j);
            }
        }
        EdgeIndex {
            n: g.n(),
            dst: Arc::new(dst),
            src: Arc::new(src),
        }
    }

    pub fn len(&self) -> usize {
        self.dst.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dst.is_empty()
    }
}

/// `AdaptiveAvgPool1D(ReLU(LayerNorm(X W_p + b_p)))`.
pub fn universal_encode(
    tape: &mut Tape,
    x: &Arc<CsrMatrix>,
    w_p: Var,
    b_p: Var,
    d_out: usize,
) -> Result<Var> {
    let d_h = tape.shape(w_p).1;
    if d_out == 0 || d_out > d_h {
        return Err(Error::invalid(format!(
            "universal encoder needs 1 <= d_out <= d_h, got {d_out} > {d_h}"
        )));
    }
    let proj = tape.sparse_matmul(x, w_p)?;
    let shifted = tape.add(proj, b_p)?;
    let normed = tape.layer_norm(shifted);
    let act = tape.relu(normed);
    tape.adaptive_avg_pool(act, d_out)
}

/// `σ(Â_norm H W)`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    a_norm: &Arc<CsrMatrix>,
    w: Var,
    act: Activation,
) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let prop = tape.sparse_matmul(a_norm, hw)?;
    Ok(activate(tape, prop, act))
}

/// One attention head. Logit for edge `i <- j` is
/// `LeakyReLU(a[..m]·Wh_i + a[m..2m]·Wh_j + a[2m..]·(p_i - p_j))`, the last
/// term present only when `pe` is given. Returns the aggregated `n x m`
/// output and the `E x 1` attention weights in `edges` order.
pub fn attention_head(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    w: Var,
    a: Var,
    pe: Option<Var>,
) -> Result<(Var, Var)> {
    let wh = tape.matmul(h, w)?;
    let m = tape.shape(wh).1;
    let expect = 2 * m + pe.map_or(0, |p| tape.shape(p).1);
    if tape.shape(a) != (expect, 1) {
        return Err(Error::ShapeMismatch {
            op: "attention vector",
            lhs: tape.shape(a),
            rhs: (expect, 1),
        });
    }
    let a_dst = tape.row_slice(a, 0, m)?;
    let a_src = tape.row_slice(a, m, 2 * m)?;
    let s_dst = tape.matmul(wh, a_dst)?;
    let s_src = tape.matmul(wh, a_src)?;
    let e_dst = tape.gather_rows(s_dst, &edges.dst)?;
    let e_src = tape.gather_rows(s_src, &edges.src)?;
    let mut logit = tape.add(e_dst, e_src)?;
    if let Some(p) = pe {
        let a_pe = tape.row_slice(a, 2 * m, expect)?;
        let pa = tape.matmul(p, a_pe)?;
        let p_dst = tape.gather_rows(pa, &edges.dst)?;
        let p_src = tape.gather_rows(pa, &edges.src)?;
        let diff = tape.sub(p_dst, p_src)?;
        logit = tape.add(logit, diff)?;
    }
    let logit = tape.leaky_relu(logit, ATTENTION_SLOPE);
    let alpha = tape.segment_softmax(logit, &edges.dst, edges.n)?;
    let msg = tape.gather_rows(wh, &edges.src)?;
    let weighted = tape.mul(msg, alpha)?;
    let out = tape.segment_sum(weighted, &edges.dst, edges.n)?;
    Ok((out, alpha))
}

/// Multi-head attention layer: heads are concatenated when `concat`,
/// averaged otherwise, then passed through `act`.
pub fn attention_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    heads: &[(Var, Var)],
    pe: Option<Var>,
    concat: bool,
    act: Activation,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::invalid("attention layer needs at least one head"));
    }
    let mut outs = Vec::with_capacity(heads.len());
    for &(w, a) in heads {
        outs.push(attention_head(tape, h, edges, w, a, pe)?.0);
    }
    let merged = if outs.len() == 1 {
        outs[0]
    } else if concat {
        tape.concat(&outs, 1)?
    } else {
        let mut acc = outs[0];
        for &o in &outs[1..] {
            acc = tape.add(acc, o)?;
        }
        tape.scale(acc, 1.0 / outs.len() as f64)
    };
    Ok(activate(tape, merged, act))
}

/// Row-normalized adjacency over at most `sample_size` neighbors per node,
/// drawn without replacement from the `(seed, layer)` stream. Isolated
/// nodes get an empty row.
pub fn sampled_mean_operator(
    g: &Graph,
    sample_size: usize,
    seed: u64,
    layer: usize,
) -> Result<CsrMatrix> {
    if sample_size == 0 {
        return Err(Error::invalid("sample_size must be >= 1"));
    }
    let mut rng = rng::substream(seed, "sage", layer as u64);
    let mut trip = Vec::new();
    for i in 0..g.n() {
        let nb = g.neighbors(i);
        if nb.len() <= sample_size {
            let w = 1.0 / nb.len() as f64;
            trip.extend(nb.iter().map(|&j| (i, j, w)));
        } else {
            let w = 1.0 / sample_size as f64;
            trip.extend(
                sample(&mut rng, nb.len(), sample_size)
                    .into_iter()
                    .map(|k| (i, nb[k], w)),
            );
        }
    }
    Ok(CsrMatrix::from_triplets(g.n(), g.n(), trip))
}

/// `σ([H ‖ S H] W)` with `S` a neighbor-mean operator.
pub fn sage_layer(
    tape: &mut Tape,
    h: Var,
    s: &Arc<CsrMatrix>,
    w: Var,
    act: Activation,
) -> Result<Var> {
    let mean = tape.sparse_matmul(s, h)?;
    let cat = tape.concat(&[h, mean], 1)?;
    let out = tape.matmul(cat, w)?;
    Ok(activate(tape, out, act))
}

/// Weights of a two-layer perceptron `relu(x W1 + b1) W2 + b2`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let z = tape.matmul(x, self.w1)?;
        let z = tape.add(z, self.b1)?;
        let z = tape.relu(z);
        let z = tape.matmul(z, self.w2)?;
        tape.add(z, self.b2)
    }
}

/// `σ(MLP((1 + ε) h_v + Σ_{u ∈ N(v)} h_u))`; `eps = None` fixes ε at 0.
pub fn gin_layer(
    tape: &mut Tape,
    h: Var,
    adj: &Arc<CsrMatrix>,
    eps: Option<Var>,
    mlp: &Mlp,
    act: Activation,
) -> Result<Var> {
    let agg = tape.sparse_matmul(adj, h)?;
    let own = match eps {
        Some(e) => {
            let scaled = tape.mul(h, e)?;
            tape.add(h, scaled)?
        }
        None => h,
    };
    let sum = tape.add(own, agg)?;
    let out = mlp.forward(tape, sum)?;
    Ok(activate(tape, out, act))
}

/// Message passing with `m_v = Σ_u ReLU([h_v ‖ h_u ‖ 1] W_m)` over directed
/// edges `v <- u`, then `h'_v = σ([h_v ‖ m_v] U)`. The constant column is
/// the unit edge feature.
pub fn mpnn_layer(
    tape: &mut Tape,
    h: Var,
    edges: &EdgeIndex,
    w_m: Var,
    u: Var,
    act: Activation,
) -> Result<Var> {
    let d_msg = tape.shape(w_m).1;
    let messages = if edges.is_empty() {
        tape.constant(Tensor::zeros(edges.n, d_msg))
    } else {
        let hv = tape.gather_rows(h, &edges.dst)?;
        let hu = tape.gather_rows(h, &edges.src)?;
        let ones = tape.constant(Tensor::full(edges.len(), 1, 1.0));
        let cat = tape.concat(&[hv, hu, ones], 1)?;
        let pre = tape.matmul(cat, w_m)?;
        let m = tape.relu(pre);
        tape.segment_sum(m, &edges.dst, edges.n)?
    };
    let cat = tape.concat(&[h, messages], 1)?;
    let out = tape.matmul(cat, u)?;
    Ok(activate(tape, out, act))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Sum,
    Concat,
}

/// Elementwise sum, or concatenation followed by `proj`.
pub fn fuse_all(tape: &mut Tape, zs: &[Var], mode: Fusion, proj: Option<Var>) -> Result<Var> {
    let Some(&first) = zs.first() else {
        return Err(Error::invalid("fusion of zero embeddings"));
    };
    let shape = tape.shape(first);
    for &z in zs {
        if tape.shape(z) != shape {
            return Err(Error::ShapeMismatch {
                op: "fuse_all",
                lhs: shape,
                rhs: tape.shape(z),
            });
        }
    }
    match mode {
        Fusion::Sum => {
            let mut acc = first;
            for &z in &zs[1..] {
                acc = tape.add(acc, z)?;
            }
            Ok(acc)
        }
        Fusion::Concat => {
            let cat = tape.concat(zs, 1)?;
            let proj = proj.ok_or_else(|| Error::invalid("concat fusion needs a projection"))?;
            tape.matmul(cat, proj)
        }
    }
}
