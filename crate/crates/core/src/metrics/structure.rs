//! Agreement between embedding geometry and graph structure.

use rayon::prelude::*;

use crate::autodiff::COSINE_EPS;
use crate::graph::Graph;
use crate::tensor::{CsrMatrix, Tensor};

/// Pearson correlations of pairwise similarities with adjacency over the
/// strict upper triangle. `None` marks a zero-variance side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyCorrelations {
    pub cosine: Option<f64>,
    pub dot: Option<f64>,
    /// Correlation of the negated squared distance.
    pub euclidean: Option<f64>,
}

const ROW_BLOCK: usize = 256;

/// Visits the strict upper triangle block by block, handing each row `i`
/// its Gram row `z_i · z_j` for `j > i`.
fn for_upper_gram(z: &Tensor, mut f: impl FnMut(usize, &[f64])) {
    let n = z.rows();
    let zt = z.transpose();
    let mut start = 0;
    while start < n {
        let end = (start + ROW_BLOCK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let gram = z.select_rows(&idx).matmul(&zt).expect("conforming shapes");
        for (r, i) in (start..end).enumerate() {
            f(i, &gram.row(r)[i + 1..]);
        }
        start = end;
    }
}

pub fn adjacency_correlations(z: &Tensor, g: &Graph) -> AdjacencyCorrelations {
    let n = z.rows();
    let none = AdjacencyCorrelations {
        cosine: None,
        dot: None,
        euclidean: None,
    };
    if n < 2 {
        return none;
    }
    let sq: Vec<f64> = (0..n)
        .map(|i| z.row(i).iter().map(|x| x * x).sum())
        .collect();
    let norm: Vec<f64> = sq.iter().map(|s| s.sqrt().max(COSINE_EPS)).collect();
    let sims =
        |i: usize, j: usize, gij: f64| [gij / (norm[i] * norm[j]), gij, 2.0 * gij - sq[i] - sq[j]];

    let pairs = (n * (n - 1) / 2) as f64;
    let a_mean = g.num_edges() as f64 / pairs;
    let a_var = a_mean * (1.0 - a_mean);

    let mut sum = [0.0; 3];
    for_upper_gram(z, |i, row| {
        let mut part = [0.0; 3];
        for (o, &gij) in row.iter().enumerate() {
            let s = sims(i, i + 1 + o, gij);
            for k in 0..3 {
                part[k] += s[k];
            }
        }
        for k in 0..3 {
            sum[k] += part[k];
        }
    });
    let mean = sum.map(|s| s / pairs);

    let (mut var, mut cov) = ([0.0; 3], [0.0; 3]);
    for_upper_gram(z, |i, row| {
        let nb = g.neighbors(i);
        let (mut pv, mut pc) = ([0.0; 3], [0.0; 3]);
        for (o, &gij) in row.iter().enumerate() {
            let j = i + 1 + o;
            let a = if nb.binary_search(&j).is_ok() {
                1.0
            } else {
                0.0
            } - a_mean;
            let s = sims(i, j, gij);
            for k in 0..3 {
                let d = s[k] - mean[k];
                pv[k] += d * d;
                pc[k] += d * a;
            }
        }
        for k in 0..3 {
            var[k] += pv[k] / pairs;
            cov[k] += pc[k] / pairs;
        }
    });
    let corr = |k: usize| {
        if var[k] <= 0.0 || a_var <= 0.0 {
            None
        } else {
            Some((cov[k] / (var[k].sqrt() * a_var.sqrt())).clamp(-1.0, 1.0))
        }
    };
    AdjacencyCorrelations {
        cosine: corr(0),
        dot: corr(1),
        euclidean: corr(2),
    }
}

/// Up to `k` nodes nearest to `u` by hop count, ties by node id.
pub fn graph_neighbors(g: &Graph, u: usize, k: usize) -> Vec<usize> {
    let mut seen = vec![false; g.n()];
    seen[u] = true;
    let mut layer = vec![u];
    let mut out = Vec::with_capacity(k);
    while out.len() < k && !layer.is_empty() {
        let mut next = Vec::new();
        for &v in &layer {
            for &w in g.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        out.extend(next.iter().take(k - out.len()));
        layer = next;
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` nodes nearest to `u` in Euclidean distance, ties by node id.
pub fn embedding_neighbors(z: &Tensor, u: usize, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = (0..z.rows())
        .filter(|&v| v != u)
        .map(|v| (sq_dist(z.row(u), z.row(v)), v))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = k.min(d.len());
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(_, v)| v).collect()
}

/// Mean over nodes of `|N_k^graph(i) ∩ N_k^embed(i)| / k`, in `[0, 1]`.
pub fn knn_consistency(z: &Tensor, g: &Graph, k: usize) -> f64 {
    let n = z.rows();
    if n == 0 || k == 0 {
        return 0.0;
    }
    let total: usize = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut a = graph_neighbors(g, u, k);
            a.sort_unstable();
            embedding_neighbors(z, u, k)
                .iter()
                .filter(|v| a.binary_search(v).is_ok())
                .count()
        })
        .sum();
    total as f64 / (n * k) as f64
}

/// Fraction of the off-diagonal PMI mass (pairs `i < j`) whose endpoints
/// share a cluster, in `[0, 1]`. `None` when the graph has no such mass.
pub fn coherence(pmi: &CsrMatrix, assignment: &[usize]) -> Option<f64> {
    let (mut within, mut total) = (0.0, 0.0);
    for (i, j, v) in pmi.iter() {
        if i < j {
            total += v;
            if assignment[i] == assignment[j] {
                within += v;
            }
        }
    }
    (total > 0.0).then(|| within / total)
}
