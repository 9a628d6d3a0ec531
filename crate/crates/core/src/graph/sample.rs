use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Held-out link-prediction split.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub train_edges: Vec<(usize, usize)>,
    pub test_pos: Vec<(usize, usize)>,
    pub test_neg: Vec<(usize, usize)>,
    pub ratio: f64,
}

impl EdgeSplit {
    /// `g` restricted to the training edges.
    pub fn train_graph(&self, g: &Graph) -> Result<Graph> {
        g.with_edges(self.train_edges.iter().copied())
    }
}

/// Induced subgraph of `target_n` nodes gathered by a seeded BFS that starts
/// at a random labeled node and visits each frontier in shuffled order.
/// Node ids are remapped in ascending original order.
pub fn subgraph_sample(g: &Graph, target_n: usize, seed: u64) -> Result<Graph> {
    let labeled = g.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNode);
    }
    let mut rng = rng::stream(seed, "subgraph_sample");
    let start = labeled[rng.random_range(0..labeled.len())];
    bfs_sample(g, start, target_n, &mut rng)
}

/// As [`subgraph_sample`] but with a fixed start node.
pub fn subgraph_sample_from(g: &Graph, start: usize, target_n: usize, seed: u64) -> Result<Graph> {
    if start >= g.n() {
        return Err(Error::invalid(format!("start node {start} out of range")));
    }
    let mut rng = rng::stream(seed, "subgraph_sample");
    bfs_sample(g, start, target_n, &mut rng)
}

fn bfs_sample(g: &Graph, start: usize, target_n: usize, rng: &mut Rng) -> Result<Graph> {
    if target_n > g.n() {
        return Err(Error::invalid(format!(
            "target_n {target_n} exceeds n = {}",
            g.n()
        )));
    }
    let mut seen = vec![false; g.n()];
    let mut picked = Vec::with_capacity(target_n);
    let mut queue = VecDeque::new();
    let mut next_start = Some(start);
    while picked.len() < target_n {
        let s = match next_start.take() {
            Some(s) => s,
            None => {
                // component exhausted: restart from a random unvisited node,
                // preferring labeled ones
                let unseen_labeled: Vec<usize> = (0..g.n())
                    .filter(|&i| !seen[i] && g.labels()[i].is_some())
                    .collect();
                let pool = if unseen_labeled.is_empty() {
                    (0..g.n()).filter(|&i| !seen[i]).collect()
                } else {
                    unseen_labeled
                };
                pool[rng.random_range(0..pool.len())]
            }
        };
        seen[s] = true;
        picked.push(s);
        queue.push_back(s);
        'bfs: while let Some(u) = queue.pop_front() {
            let mut nbrs: Vec<usize> = g
                .neighbors(u)
                .iter()
                .copied()
                .filter(|&v| !seen[v])
                .collect();
            nbrs.shuffle(rng);
            for v in nbrs {
                if picked.len() == target_n {
                    break 'bfs;
                }
                seen[v] = true;
                picked.push(v);
                queue.push_back(v);
            }
        }
        queue.clear();
    }
    picked.sort_unstable();
    g.induced_subgraph(&picked)
}

/// `k` uniform draws from `V \ (N(u) ∪ {u})` for every anchor `u`,
/// returned anchor-major.
pub fn sample_negatives(g: &Graph, anchors: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = rng::stream(seed, "negatives");
    sample_negatives_with(g, anchors, k, &mut rng)
}

pub(crate) fn sample_negatives_with(
    g: &Graph,
    anchors: &[usize],
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let n = g.n();
    let mut out = Vec::with_capacity(anchors.len() * k);
    for &u in anchors {
        if g.degree(u) + 1 >= n {
            return Err(Error::NoNegative(u));
        }
        for _ in 0..k {
            loop {
                let w = rng.random_range(0..n);
                if w != u && !g.has_edge(u, w) {
                    out.push(w);
                    break;
                }
            }
        }
    }
    Ok(out)
}

/// Holds out `round(holdout * |E|)` edges (at least one) as test positives and
/// pairs them with as many uniformly drawn non-edges.
pub fn edge_split(g: &Graph, holdout: f64, seed: u64) -> Result<EdgeSplit> {
    if !(holdout > 0.0 && holdout < 1.0) {
        return Err(Error::invalid(format!(
            "holdout must lie in (0, 1), got {holdout}"
        )));
    }
    let m = g.num_edges();
    let n_test = ((holdout * m as f64).round() as usize).max(1);
    if n_test >= m {
        return Err(Error::invalid(format!(
            "holdout {holdout} removes all {m} edges"
        )));
    }
    let n = g.n();
    let non_edges = n * (n - 1) / 2 - m;
    if non_edges < n_test {
        return Err(Error::invalid(
            "not enough non-edges for balanced negatives",
        ));
    }
    let mut rng = rng::stream(seed, "edge_split");
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut rng);
    let mut test_pos: Vec<(usize, usize)> = order[..n_test].iter().map(|&i| g.edges()[i]).collect();
    let mut train_edges: Vec<(usize, usize)> =
        order[n_test..].iter().map(|&i| g.edges()[i]).collect();
    test_pos.sort_unstable();
    train_edges.sort_unstable();

    let mut chosen = HashSet::new();
    let mut test_neg = Vec::with_capacity(n_test);
    while test_neg.len() < n_test {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if g.has_edge(pair.0, pair.1) || !chosen.insert(pair) {
            continue;
        }
        test_neg.push(pair);
    }
    Ok(EdgeSplit {
        train_edges,
        test_pos,
        test_neg,
        ratio: holdout,
    })
}
