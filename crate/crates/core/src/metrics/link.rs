//! Link-prediction scores and adjacency reconstruction.

use rand::Rng as _;

use super::classification::ConfusionCounts;
use crate::error::{Error, Result};
use crate::graph::{EdgeSplit, Graph};
use crate::rng;
use crate::tensor::Tensor;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `σ(z_u · z_v)` for every pair.
pub fn dot_scores(z: &Tensor, pairs: &[(usize, usize)]) -> Vec<f64> {
    pairs
        .iter()
        .map(|&(u, v)| sigmoid(dot(z.row(u), z.row(v))))
        .collect()
}

/// Area under the ROC curve as the Mann-Whitney statistic with midranks
/// for ties. Computed from integer rank sums so that it equals the
/// fraction of correctly ordered (positive, negative) pairs, ties counted
/// half, bit for bit.
pub fn auroc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "AUROC needs at least one positive and one negative",
        ));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    if all.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // twice the positive rank sum, with 1-based midranks
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let positives = all[i..j].iter().filter(|x| x.1).count() as u128;
        // midrank of positions i+1..=j is (i + 1 + j) / 2
        twice_rank_sum += positives * (i as u128 + 1 + j as u128);
        i = j;
    }
    let (p, n) = (pos.len() as u128, neg.len() as u128);
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * n) as f64)
}

/// Average precision: `Σ (R_k - R_{k-1}) P_k` over descending distinct
/// score thresholds.
pub fn average_precision(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::invalid(
            "average precision needs at least one positive",
        ));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

/// Link-prediction metrics, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkScores {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub specificity: f64,
}

/// Scores already computed for held-out positives and negatives; a pair is
/// predicted to be a link when its score reaches `threshold`.
pub fn link_scores(pos: &[f64], neg: &[f64], threshold: f64) -> Result<LinkScores> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "link prediction needs held-out positives and negatives",
        ));
    }
    let truth: Vec<bool> = std::iter::repeat_n(true, pos.len())
        .chain(std::iter::repeat_n(false, neg.len()))
        .collect();
    let pred: Vec<bool> = pos.iter().chain(neg).map(|&s| s >= threshold).collect();
    let c = ConfusionCounts::from_predictions(&truth, &pred);
    Ok(LinkScores {
        accuracy: c.accuracy(),
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        auroc: auroc(pos, neg)?,
        aupr: average_precision(pos, neg)?,
        specificity: c.specificity(),
    })
}

/// Decodes the split's held-out pairs with `σ(z_u · z_v)`.
pub fn link_pred_eval(z: &Tensor, split: &EdgeSplit, threshold: f64) -> Result<LinkScores> {
    link_scores(
        &dot_scores(z, &split.test_pos),
        &dot_scores(z, &split.test_neg),
        threshold,
    )
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Mean binary cross-entropy of `probs` against `labels`, with
/// probabilities clamped to `[1e-7, 1 - 1e-7]`.
pub fn bce(probs: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / probs.len() as f64
}

/// Every edge once plus `|E|` uniformly drawn distinct-endpoint pairs,
/// labeled by adjacency.
pub fn reconstruction_pairs(g: &Graph, seed: u64) -> Result<(Vec<(usize, usize)>, Vec<bool>)> {
    let m = g.num_edges();
    if m == 0 || g.n() < 2 {
        return Err(Error::invalid("reconstruction needs at least one edge"));
    }
    let mut pairs = g.edges().to_vec();
    let mut labels = vec![true; m];
    let mut r = rng::stream(seed, "reconstruction");
    while pairs.len() < 2 * m {
        let a = r.random_range(0..g.n());
        let b = r.random_range(0..g.n());
        if a != b {
            pairs.push((a.min(b), a.max(b)));
            labels.push(g.has_edge(a, b));
        }
    }
    Ok((pairs, labels))
}

/// BCE of `σ(z_i · z_j)` against adjacency over [`reconstruction_pairs`].
pub fn reconstruction_bce(z: &Tensor, g: &Graph, seed: u64) -> Result<f64> {
    let (pairs, labels) = reconstruction_pairs(g, seed)?;
    Ok(bce(&dot_scores(z, &pairs), &labels))
}
