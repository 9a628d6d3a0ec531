//! Unsupervised objectives on node embeddings and their gated combinations.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, COSINE_EPS};
use crate::encoders::Mlp;
use crate::error::{Error, Result};
use crate::graph::{pagerank, pmi_matrix, Graph, PageRankOptions};
use crate::params::{ParameterSet, VarMap};
use crate::rng;
use crate::tensor::{CsrMatrix, Tensor};

/// The five base objectives, in canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BaseLoss {
    Contrastive,
    Dae,
    Pmi,
    PageRank,
    Triplet,
}

impl BaseLoss {
    pub const ALL: [BaseLoss; 5] = [
        BaseLoss::Contrastive,
        BaseLoss::Dae,
        BaseLoss::Pmi,
        BaseLoss::PageRank,
        BaseLoss::Triplet,
    ];

    /// Column name used in reports.
    pub fn name(self) -> &'static str {
        match self {
            BaseLoss::Contrastive => "Contr_l",
            BaseLoss::Dae => "CrossE_L",
            BaseLoss::Pmi => "PMI_L",
            BaseLoss::PageRank => "PR_L",
            BaseLoss::Triplet => "Triplet_L",
        }
    }

    /// Name of the gate parameter for this member.
    pub fn gate_name(self) -> String {
        format!("gate.{}", self.name())
    }
}

impl fmt::Display for BaseLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaseLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        BaseLoss::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::UnknownLoss(s.to_string()))
    }
}

/// Hyperparameters shared by the objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossContext {
    pub margin: f64,
    pub dae_sigma: f64,
    /// Negatives drawn per positive pair.
    pub negatives: usize,
    /// Upper bound on PageRank anchors per step.
    pub anchor_count: usize,
}

impl Default for LossContext {
    fn default() -> Self {
        LossContext {
            margin: 0.5,
            dae_sigma: 0.1,
            negatives: 1,
            anchor_count: 512,
        }
    }
}

impl LossContext {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(Error::invalid(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.dae_sigma >= 0.0) {
            return Err(Error::invalid(format!(
                "dae_sigma must be >= 0, got {}",
                self.dae_sigma
            )));
        }
        if self.negatives == 0 || self.anchor_count == 0 {
            return Err(Error::invalid("negatives and anchor_count must be >= 1"));
        }
        Ok(())
    }
}

/// A nonempty set of base losses combined as `Σ σ(θ_i) L_i`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HybridLossSpec {
    members: Vec<BaseLoss>,
}

impl HybridLossSpec {
    pub fn new(members: impl IntoIterator<Item = BaseLoss>) -> Result<Self> {
        let mut members: Vec<BaseLoss> = members.into_iter().collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            return Err(Error::invalid(
                "a loss combination needs at least one member",
            ));
        }
        Ok(HybridLossSpec { members })
    }

    pub fn single(loss: BaseLoss) -> Self {
        HybridLossSpec {
            members: vec![loss],
        }
    }

    pub fn members(&self) -> &[BaseLoss] {
        &self.members
    }

    pub fn order(&self) -> usize {
        self.members.len()
    }

    pub fn contains(&self, loss: BaseLoss) -> bool {
        self.members.contains(&loss)
    }

    pub fn name(&self) -> String {
        self.members
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

impl fmt::Display for HybridLossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for HybridLossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let members = s
            .split('+')
            .map(str::parse)
            .collect::<Result<Vec<BaseLoss>>>()?;
        HybridLossSpec::new(members)
    }
}

impl Serialize for HybridLossSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for HybridLossSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All combinations of at most `max_order` base losses, sorted by name.
pub fn enumerate_hybrids(max_order: usize) -> Result<Vec<HybridLossSpec>> {
    if !(1..=BaseLoss::ALL.len()).contains(&max_order) {
        return Err(Error::invalid(format!(
            "max_order must lie in 1..=5, got {max_order}"
        )));
    }
    let mut out: Vec<HybridLossSpec> = (1u32..1 << BaseLoss::ALL.len())
        .filter(|mask| mask.count_ones() as usize <= max_order)
        .map(|mask| HybridLossSpec {
            members: BaseLoss::ALL
                .into_iter()
                .enumerate()
                .filter(|(i, _)| mask >> i & 1 == 1)
                .map(|(_, l)| l)
                .collect(),
        })
        .collect();
    out.sort_by_key(HybridLossSpec::name);
    Ok(out)
}

/// `-(1/n²) Σ_ij PMI_ij cos(z_i, z_j)` over the stored entries of `pmi`.
///
/// A self-pair has cosine exactly 1 once the row norm clears the cosine
/// floor, so those terms enter as constants.
pub fn pmi_loss(tape: &mut Tape, z: Var, pmi: &CsrMatrix) -> Result<Var> {
    let n = tape.shape(z).0;
    if pmi.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            op: "pmi_loss",
            lhs: tape.shape(z),
            rhs: pmi.shape(),
        });
    }
    let zv = tape.value(z);
    let above_floor: Vec<bool> = (0..n)
        .map(|i| zv.row(i).iter().map(|x| x * x).sum::<f64>().sqrt() >= COSINE_EPS)
        .collect();
    let (mut rows, mut cols, mut vals) = (Vec::new(), Vec::new(), Vec::new());
    let mut constant = 0.0;
    for (i, j, v) in pmi.iter() {
        if v == 0.0 {
            continue;
        }
        if i == j && above_floor[i] {
            constant += v;
        } else {
            rows.push(i);
            cols.push(j);
            vals.push(v);
        }
    }
    let scale = -1.0 / (n * n) as f64;
    let fixed = tape.constant(Tensor::scalar(scale * constant));
    if vals.is_empty() {
        return Ok(fixed);
    }
    let zi = tape.gather_rows(z, &Arc::new(rows))?;
    let zj = tape.gather_rows(z, &Arc::new(cols))?;
    let cos = tape.cosine_rows(zi, zj)?;
    let w = tape.constant(Tensor::column(vals));
    let weighted = tape.mul(cos, w)?;
    let total = tape.sum_all(weighted);
    let scaled = tape.scale(total, scale);
    tape.add(scaled, fixed)
}

/// Mean of `max(0, M - cos(z_a, z_p) + cos(z_a, z_n))` over index triples.
pub fn margin_ranking(
    tape: &mut Tape,
    z: Var,
    anchor: Vec<usize>,
    pos: Vec<usize>,
    neg: Vec<usize>,
    margin: f64,
) -> Result<Var> {
    if anchor.is_empty() || anchor.len() != pos.len() || anchor.len() != neg.len() {
        return Err(Error::invalid(
            "ranking loss needs equally many anchors, positives and negatives",
        ));
    }
    let za = tape.gather_rows(z, &Arc::new(anchor))?;
    let zp = tape.gather_rows(z, &Arc::new(pos))?;
    let zn = tape.gather_rows(z, &Arc::new(neg))?;
    let cp = tape.cosine_rows(za, zp)?;
    let cn = tape.cosine_rows(za, zn)?;
    let gap = tape.sub(cn, cp)?;
    let m = tape.constant(Tensor::scalar(margin));
    let shifted = tape.add(gap, m)?;
    let h = tape.hinge(shifted);
    Ok(tape.mean_all(h))
}

/// Sampled `(u, v, k_u)` triples: both directions of every edge, each with
/// `ctx.negatives` non-neighbors of `u` drawn from the named stream.
pub fn edge_triples(
    g: &Graph,
    ctx: &LossContext,
    seed: u64,
    stream: &str,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    if g.num_edges() == 0 {
        return Err(Error::invalid("edge-based loss on a graph without edges"));
    }
    let k = ctx.negatives.max(1);
    let mut anchors = Vec::with_capacity(2 * g.num_edges());
    let mut positives = Vec::with_capacity(2 * g.num_edges());
    for &(u, v) in g.edges() {
        anchors.extend([u, v]);
        positives.extend([v, u]);
    }
    let mut r = rng::stream(seed, stream);
    let neg = crate::graph::sample_negatives_with(g, &anchors, k, &mut r)?;
    let rep = |xs: Vec<usize>| {
        xs.into_iter()
            .flat_map(|x| std::iter::repeat_n(x, k))
            .collect::<Vec<_>>()
    };
    Ok((rep(anchors), rep(positives), neg))
}

/// Edge-contrastive hinge loss; negatives from the `contrastive` stream.
pub fn contrastive_loss(
    tape: &mut Tape,
    z: Var,
    g: &Graph,
    ctx: &LossContext,
    seed: u64,
) -> Result<Var> {
    let (a, p, n) = edge_triples(g, ctx, seed, "contrastive")?;
    margin_ranking(tape, z, a, p, n, ctx.margin)
}

/// Same objective as [`contrastive_loss`] with negatives from the `triplet` stream.
pub fn triplet_loss(
    tape: &mut Tape,
    z: Var,
    g: &Graph,
    ctx: &LossContext,
    seed: u64,
) -> Result<Var> {
    let (a, p, n) = edge_triples(g, ctx, seed, "triplet")?;
    margin_ranking(tape, z, a, p, n, ctx.margin)
}

pub const DAE_PREFIX: &str = "loss.dae";

/// Denoiser weights `loss.dae.{w1,b1,w2,b2}` for a `d -> d -> d` perceptron.
pub fn dae_params(params: &mut ParameterSet, d: usize) {
    params.insert_glorot(&format!("{DAE_PREFIX}.w1"), d, d);
    params.insert_zeros(&format!("{DAE_PREFIX}.b1"), 1, d);
    params.insert_glorot(&format!("{DAE_PREFIX}.w2"), d, d);
    params.insert_zeros(&format!("{DAE_PREFIX}.b2"), 1, d);
}

pub fn dae_mlp(vars: &VarMap) -> Result<Mlp> {
    Ok(Mlp {
        w1: vars.get(&format!("{DAE_PREFIX}.w1"))?,
        b1: vars.get(&format!("{DAE_PREFIX}.b1"))?,
        w2: vars.get(&format!("{DAE_PREFIX}.w2"))?,
        b2: vars.get(&format!("{DAE_PREFIX}.b2"))?,
    })
}

/// Gaussian corruption `N(0, sigma²)` shaped like `z`, from the `dae` stream.
pub fn dae_noise(rows: usize, cols: usize, sigma: f64, seed: u64) -> Tensor {
    if sigma == 0.0 {
        return Tensor::zeros(rows, cols);
    }
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let mut r = rng::stream(seed, "dae");
    let data = (0..rows * cols).map(|_| normal.sample(&mut r)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized to shape")
}

/// `mean((Z - denoiser(Z + ε))²)`.
pub fn dae_loss(tape: &mut Tape, z: Var, denoiser: &Mlp, sigma: f64, seed: u64) -> Result<Var> {
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!(
            "dae sigma must be >= 0, got {sigma}"
        )));
    }
    let (n, d) = tape.shape(z);
    let noise = tape.constant(dae_noise(n, d, sigma, seed));
    let noisy = tape.add(z, noise)?;
    let recon = denoiser.forward(tape, noisy)?;
    let diff = tape.sub(z, recon)?;
    let sq = tape.squared_frobenius(diff);
    Ok(tape.scale(sq, 1.0 / (n * d) as f64))
}

/// Most and least PageRank-similar partners of `u`, ties to the lowest id.
pub fn pagerank_partners(pr: &[f64], u: usize) -> Result<(usize, usize)> {
    if pr.len() < 3 {
        return Err(Error::invalid("PageRank loss needs at least 3 nodes"));
    }
    let dist = |w: usize| (pr[u] - pr[w]).abs();
    let mut pos = usize::MAX;
    for w in (0..pr.len()).filter(|&w| w != u) {
        if pos == usize::MAX || dist(w) < dist(pos) {
            pos = w;
        }
    }
    let mut neg = usize::MAX;
    for w in (0..pr.len()).filter(|&w| w != u && w != pos) {
        if neg == usize::MAX || dist(w) > dist(neg) {
            neg = w;
        }
    }
    Ok((pos, neg))
}

/// Anchors for one step: `min(anchor_count, n)` distinct nodes, sorted.
pub fn pagerank_anchors(n: usize, ctx: &LossContext, seed: u64) -> Vec<usize> {
    let m = ctx.anchor_count.min(n);
    if m == n {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, "pagerank");
    let mut a = sample(&mut r, n, m).into_vec();
    a.sort_unstable();
    a
}

/// Hinge loss pulling each anchor toward its PageRank-nearest node and away
/// from its PageRank-farthest one.
pub fn pagerank_loss(
    tape: &mut Tape,
    z: Var,
    pr: &[f64],
    ctx: &LossContext,
    seed: u64,
) -> Result<Var> {
    let n = tape.shape(z).0;
    if pr.len() != n {
        return Err(Error::invalid(format!(
            "{} PageRank scores for {n} embeddings",
            pr.len()
        )));
    }
    if n < 3 {
        return Err(Error::invalid("PageRank loss needs at least 3 nodes"));
    }
    let anchors = pagerank_anchors(n, ctx, seed);
    let (mut pos, mut neg) = (
        Vec::with_capacity(anchors.len()),
        Vec::with_capacity(anchors.len()),
    );
    for &u in &anchors {
        let (p, q) = pagerank_partners(pr, u)?;
        pos.push(p);
        neg.push(q);
    }
    margin_ranking(tape, z, anchors, pos, neg, ctx.margin)
}

/// `Σ σ(θ_i) L_i`; `values` and `gates` are keyed by member.
pub fn hybrid_loss(
    tape: &mut Tape,
    spec: &HybridLossSpec,
    values: &[(BaseLoss, Var)],
    gates: &[(BaseLoss, Var)],
) -> Result<Var> {
    let find = |xs: &[(BaseLoss, Var)], l: BaseLoss, what: &str| {
        xs.iter()
            .find(|(k, _)| *k == l)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::invalid(format!("missing {what} for {l}")))
    };
    let mut total: Option<Var> = None;
    for &l in spec.members() {
        let v = find(values, l, "base value")?;
        let theta = find(gates, l, "gate")?;
        let w = tape.sigmoid(theta);
        let term = tape.mul(v, w)?;
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("spec has a member"))
}

/// Graph statistics the objectives read, computed once per graph.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub pmi: Arc<CsrMatrix>,
    pub pagerank: Vec<f64>,
}

impl LossTargets {
    pub fn new(g: &Graph) -> Result<Self> {
        Ok(LossTargets {
            pmi: Arc::new(pmi_matrix(g, true)),
            pagerank: pagerank(g, PageRankOptions::default())?.scores,
        })
    }
}

/// Trainable parameters the objective adds next to the encoder: one gate
/// per member, initialized at 0, and the denoiser when it is a member.
pub fn loss_params(spec: &HybridLossSpec, embed_dim: usize, seed: u64) -> ParameterSet {
    let mut p = ParameterSet::new(seed);
    for &l in spec.members() {
        p.insert_zeros(&l.gate_name(), 1, 1);
    }
    if spec.contains(BaseLoss::Dae) {
        dae_params(&mut p, embed_dim);
    }
    p
}

/// One base loss on the tape. `vars` must hold the denoiser for `Dae`.
pub fn base_loss(
    tape: &mut Tape,
    loss: BaseLoss,
    z: Var,
    g: &Graph,
    targets: &LossTargets,
    vars: &VarMap,
    ctx: &LossContext,
    seed: u64,
) -> Result<Var> {
    match loss {
        BaseLoss::Contrastive => contrastive_loss(tape, z, g, ctx, seed),
        BaseLoss::Dae => dae_loss(tape, z, &dae_mlp(vars)?, ctx.dae_sigma, seed),
        BaseLoss::Pmi => pmi_loss(tape, z, &targets.pmi),
        BaseLoss::PageRank => pagerank_loss(tape, z, &targets.pagerank, ctx, seed),
        BaseLoss::Triplet => triplet_loss(tape, z, g, ctx, seed),
    }
}

/// Gated total of every member of `spec`, plus each member's value.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    spec: &HybridLossSpec,
    z: Var,
    g: &Graph,
    targets: &LossTargets,
    vars: &VarMap,
    ctx: &LossContext,
    seed: u64,
) -> Result<(Var, Vec<(BaseLoss, Var)>)> {
    let mut values = Vec::with_capacity(spec.order());
    let mut gates = Vec::with_capacity(spec.order());
    for &l in spec.members() {
        values.push((l, base_loss(tape, l, z, g, targets, vars, ctx, seed)?));
        gates.push((l, vars.get(&l.gate_name())?));
    }
    let total = hybrid_loss(tape, spec, &values, &gates)?;
    Ok((total, values))
}
