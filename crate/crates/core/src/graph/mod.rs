//! Immutable undirected graphs with node features and optional labels.

mod io;
mod sample;
mod spectral;

use std::collections::VecDeque;
use std::sync::Arc;

pub use io::{load_elliptic_csv, load_linqs, load_node_table, write_node_table};
pub(crate) use sample::sample_negatives_with;
pub use sample::{edge_split, sample_negatives, subgraph_sample, subgraph_sample_from, EdgeSplit};
pub use spectral::{
    laplacian_positional_encodings, normalized_adjacency, pagerank, pmi_matrix, PageRank,
    PageRankOptions,
};

use crate::error::{Error, Result};
use crate::tensor::{CsrMatrix, Tensor};

/// Undirected simple graph. Edges are stored once as `(u, v)` with `u < v`,
/// and as a symmetric CSR adjacency with sorted neighbor lists.
#[derive(Debug, Clone)]
pub struct Graph {
    name: String,
    n: usize,
    edges: Vec<(usize, usize)>,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    features: Tensor,
    sparse_features: Arc<CsrMatrix>,
    labels: Vec<Option<usize>>,
    num_classes: usize,
    directed_source: bool,
}

impl Graph {
    /// Builds a graph; edges are symmetrized, deduplicated and self-loops dropped.
    pub fn new(
        name: impl Into<String>,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        features: Tensor,
        labels: Option<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if features.rows() != n {
            return Err(Error::ShapeMismatch {
                op: "graph features",
                lhs: features.shape(),
                rhs: (n, features.cols()),
            });
        }
        let mut und: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) has an endpoint >= n = {n}"
                )));
            }
            if u != v {
                und.push((u.min(v), u.max(v)));
            }
        }
        und.sort_unstable();
        und.dedup();

        let labels = labels.unwrap_or_else(|| vec![None; n]);
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} nodes",
                labels.len()
            )));
        }
        let num_classes = labels.iter().flatten().max().map_or(0, |m| m + 1);

        let mut deg = vec![0usize; n];
        for &(u, v) in &und {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut indptr = vec![0usize; n + 1];
        for i in 0..n {
            indptr[i + 1] = indptr[i] + deg[i];
        }
        let mut fill = indptr.clone();
        let mut indices = vec![0usize; indptr[n]];
        for &(u, v) in &und {
            indices[fill[u]] = v;
            fill[u] += 1;
            indices[fill[v]] = u;
            fill[v] += 1;
        }
        for i in 0..n {
            indices[indptr[i]..indptr[i + 1]].sort_unstable();
        }
        let sparse_features = Arc::new(CsrMatrix::from_dense(&features));
        Ok(Graph {
            name: name.into(),
            n,
            edges: und,
            indptr,
            indices,
            features,
            sparse_features,
            labels,
            num_classes,
            directed_source: false,
        })
    }

    pub fn with_directed_source(mut self, directed: bool) -> Self {
        self.directed_source = directed;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Undirected edges, each once with `u < v`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.indices[self.indptr[u]..self.indptr[u + 1]]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.indptr[u + 1] - self.indptr[u]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn sparse_features(&self) -> &Arc<CsrMatrix> {
        &self.sparse_features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn has_labels(&self) -> bool {
        self.labels.iter().any(Option::is_some)
    }

    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.n).filter(|&i| self.labels[i].is_some()).collect()
    }

    pub fn directed_source(&self) -> bool {
        self.directed_source
    }

    /// Binary adjacency as a CSR matrix (no self-loops).
    pub fn adjacency(&self) -> CsrMatrix {
        let trip = (0..self.n)
            .flat_map(|u| self.neighbors(u).iter().map(move |&v| (u, v, 1.0)))
            .collect();
        CsrMatrix::from_triplets(self.n, self.n, trip)
    }

    /// Same nodes, features and labels with a different edge set.
    pub fn with_edges(&self, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Graph> {
        let g = Graph::new(
            self.name.clone(),
            self.n,
            edges,
            self.features.clone(),
            Some(self.labels.clone()),
        )?;
        Ok(g.with_directed_source(self.directed_source))
    }

    /// Subgraph induced by `nodes`; node `nodes[i]` becomes `i`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut map = vec![usize::MAX; self.n];
        for (i, &u) in nodes.iter().enumerate() {
            if u >= self.n {
                return Err(Error::invalid(format!("node {u} out of range")));
            }
            map[u] = i;
        }
        let mut edges = Vec::new();
        for &(u, v) in &self.edges {
            if map[u] != usize::MAX && map[v] != usize::MAX {
                edges.push((map[u], map[v]));
            }
        }
        let features = self.features.select_rows(nodes);
        let labels = nodes.iter().map(|&u| self.labels[u]).collect();
        let g = Graph::new(
            self.name.clone(),
            nodes.len(),
            edges,
            features,
            Some(labels),
        )?;
        Ok(g.with_directed_source(self.directed_source))
    }

    /// Connected component id per node, numbered by smallest member.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut queue = VecDeque::new();
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &v in self.neighbors(u) {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        queue.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Hop distances from `src` (`usize::MAX` when unreachable).
    pub fn bfs_distances(&self, src: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        dist[src] = 0;
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Fraction of nodes carrying the most frequent label, among labeled nodes.
    pub fn majority_class_rate(&self) -> Option<f64> {
        let labeled: Vec<usize> = self.labels.iter().flatten().copied().collect();
        if labeled.is_empty() {
            return None;
        }
        let mut counts = vec![0usize; self.num_classes];
        for &c in &labeled {
            counts[c] += 1;
        }
        Some(*counts.iter().max().unwrap() as f64 / labeled.len() as f64)
    }
}
