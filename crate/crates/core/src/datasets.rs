//! Dataset resolution: real files when present, seeded stand-ins otherwise.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Pareto, Poisson};

use crate::error::{Error, Result};
use crate::graph::{load_elliptic_csv, load_linqs, load_node_table, subgraph_sample, Graph};
use crate::rng;
use crate::tensor::Tensor;

/// Environment variable naming a directory with dataset files.
pub const DATA_DIR_ENV: &str = "LOSSBENCH_DATA_DIR";

/// Node count of the sampled Elliptic subgraph.
pub const ELLIPTIC_SUBGRAPH: usize = 5000;

/// Shape parameters of a citation-style stand-in graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanetoidSpec {
    pub name: String,
    pub n: usize,
    pub d_in: usize,
    /// Relative class sizes; the class count is its length.
    pub class_weights: Vec<f64>,
    pub undirected_edges: usize,
    /// Fraction of edges joining same-class nodes.
    pub homophily: f64,
    /// Mean number of active words per node.
    pub words_per_node: f64,
    /// Probability that a word is drawn from the node's class vocabulary.
    pub topic_rate: f64,
}

impl PlanetoidSpec {
    pub fn cora() -> Self {
        PlanetoidSpec {
            name: "Cora".into(),
            n: 2708,
            d_in: 1433,
            class_weights: vec![351.0, 217.0, 418.0, 818.0, 426.0, 298.0, 180.0],
            undirected_edges: 5278,
            homophily: 0.81,
            words_per_node: 18.0,
            topic_rate: 0.3,
        }
    }

    pub fn citeseer() -> Self {
        PlanetoidSpec {
            name: "Citeseer".into(),
            n: 3312,
            d_in: 3703,
            class_weights: vec![264.0, 590.0, 668.0, 701.0, 596.0, 508.0],
            undirected_edges: 4552,
            homophily: 0.74,
            words_per_node: 32.0,
            topic_rate: 0.3,
        }
    }

    pub fn classes(&self) -> usize {
        self.class_weights.len()
    }
}

/// Class sizes proportional to `weights` summing to exactly `n`.
fn class_sizes(weights: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| (w / total * n as f64).floor() as usize)
        .collect();
    let mut rest = n - sizes.iter().sum::<usize>();
    let k = sizes.len();
    let mut i = 0;
    while rest > 0 {
        sizes[i % k] += 1;
        rest -= 1;
        i += 1;
    }
    sizes
}

/// Seeded stochastic-block graph with heavy-tailed degrees and sparse
/// binary bag-of-words features correlated with the class.
pub fn planetoid_like(spec: &PlanetoidSpec, seed: u64) -> Result<Graph> {
    let c = spec.classes();
    if c < 2 || spec.n < 2 * c || spec.d_in < 2 * c {
        return Err(Error::invalid(
            "stand-in needs at least two classes with room for both nodes and vocabulary",
        ));
    }
    let mut rng = rng::stream(seed, &format!("planetoid/{}", spec.name));

    let mut labels: Vec<usize> = class_sizes(&spec.class_weights, spec.n)
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| std::iter::repeat_n(k, s))
        .collect();
    labels.shuffle(&mut rng);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, &k) in labels.iter().enumerate() {
        members[k].push(i);
    }

    // degree propensities, cumulated per class for weighted endpoint draws
    let pareto = Pareto::new(1.0, 2.5).expect("valid Pareto parameters");
    let weight: Vec<f64> = (0..spec.n).map(|_| pareto.sample(&mut rng)).collect();
    let cumulative: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            let mut acc = 0.0;
            m.iter()
                .map(|&i| {
                    acc += weight[i];
                    acc
                })
                .collect()
        })
        .collect();
    let global: Vec<f64> = {
        let mut acc = 0.0;
        weight
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect()
    };
    let draw = |cum: &[f64], rng: &mut rng::Rng| -> usize {
        let x = rng.random_range(0.0..*cum.last().unwrap());
        cum.partition_point(|&v| v <= x).min(cum.len() - 1)
    };

    let max_edges = spec.n * (spec.n - 1) / 2;
    let target = spec.undirected_edges.min(max_edges / 2);
    let mut edges = std::collections::HashSet::new();
    while edges.len() < target {
        let u = draw(&global, &mut rng);
        let cu = labels[u];
        let cv = if rng.random::<f64>() < spec.homophily {
            cu
        } else {
            let other = rng.random_range(0..c - 1);
            if other >= cu {
                other + 1
            } else {
                other
            }
        };
        let v = members[cv][draw(&cumulative[cv], &mut rng)];
        if u != v {
            edges.insert((u.min(v), u.max(v)));
        }
    }
    let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
    edges.sort_unstable();

    // vocabulary: one topic block per class, the remainder shared
    let block = (spec.d_in * 3 / 5) / c;
    let poisson = Poisson::new(spec.words_per_node).map_err(|e| Error::invalid(e.to_string()))?;
    let mut features = Tensor::zeros(spec.n, spec.d_in);
    for i in 0..spec.n {
        let words = (poisson.sample(&mut rng) as usize).max(1);
        for _ in 0..words {
            let j = if rng.random::<f64>() < spec.topic_rate {
                labels[i] * block + rng.random_range(0..block)
            } else {
                rng.random_range(0..spec.d_in)
            };
            features.set(i, j, 1.0);
        }
    }
    let labels = labels.into_iter().map(Some).collect();
    Graph::new(spec.name.clone(), spec.n, edges, features, Some(labels))
}

/// Two dense communities joined by a few bridges, with features that
/// weakly identify the community. Used as a small solvable toy.
pub fn two_community(n: usize, d_in: usize, seed: u64) -> Result<Graph> {
    if n < 4 || d_in < 2 {
        return Err(Error::invalid("two_community needs n >= 4 and d_in >= 2"));
    }
    let mut rng = rng::stream(seed, "two_community");
    let half = n / 2;
    let side = |i: usize| usize::from(i >= half);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if side(u) == side(v) { 0.5 } else { 0.02 };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges.push((half - 1, half));
    let mut features = Tensor::zeros(n, d_in);
    for i in 0..n {
        for j in 0..d_in {
            let signal = if j % 2 == side(i) { 0.5 } else { 0.0 };
            features.set(i, j, signal + rng.random_range(-0.5..0.5));
        }
    }
    let labels = (0..n).map(|i| Some(side(i))).collect();
    Graph::new("two_community", n, edges, features, Some(labels))
}

fn data_dir(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
}

/// Where a resolved dataset came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Files(PathBuf),
    Synthetic,
}

/// Resolves a dataset by name (`cora`, `citeseer`, `elliptic`, the small
/// synthetic `toy` and `toy-b`, or any
/// `<name>.nodes.tsv`/`<name>.edges.tsv` pair in the data directory).
///
/// Files are searched in `dir`, then in `$LOSSBENCH_DATA_DIR`. Cora and
/// Citeseer fall back to seeded stand-ins of the standard shape. Elliptic
/// is reduced to a BFS subgraph of 5000 nodes.
pub fn load_dataset(name: &str, dir: Option<&Path>, seed: u64) -> Result<(Graph, Source)> {
    let key = name.to_ascii_lowercase();
    let display = match key.as_str() {
        "cora" => "Cora",
        "citeseer" => "Citeseer",
        "elliptic" => "Elliptic",
        _ => name,
    };
    if let Some(dir) = data_dir(dir) {
        let tsv = (
            dir.join(format!("{key}.nodes.tsv")),
            dir.join(format!("{key}.edges.tsv")),
        );
        if tsv.0.is_file() && tsv.1.is_file() {
            let g = load_node_table(&tsv.0, &tsv.1)?.with_name(display);
            return Ok((g, Source::Files(dir)));
        }
        let linqs = (
            dir.join(format!("{key}.content")),
            dir.join(format!("{key}.cites")),
        );
        if linqs.0.is_file() && linqs.1.is_file() {
            let (g, _) = load_linqs(&linqs.0, &linqs.1)?;
            return Ok((g.with_name(display), Source::Files(dir)));
        }
        if key == "elliptic" {
            let f = dir.join("elliptic_txs_features.csv");
            let e = dir.join("elliptic_txs_edgelist.csv");
            let c = dir.join("elliptic_txs_classes.csv");
            if f.is_file() && e.is_file() && c.is_file() {
                let full = load_elliptic_csv(&f, &e, &c)?;
                let g = subgraph_sample(&full, ELLIPTIC_SUBGRAPH.min(full.n()), seed)?;
                return Ok((g.with_name(display), Source::Files(dir)));
            }
        }
    }
    match key.as_str() {
        "cora" => Ok((
            planetoid_like(&PlanetoidSpec::cora(), 0)?,
            Source::Synthetic,
        )),
        "citeseer" => Ok((
            planetoid_like(&PlanetoidSpec::citeseer(), 0)?,
            Source::Synthetic,
        )),
        "toy" => Ok((
            two_community(40, 8, seed)?.with_name("Toy"),
            Source::Synthetic,
        )),
        "toy-b" => Ok((
            two_community(30, 6, seed.wrapping_add(1))?.with_name("ToyB"),
            Source::Synthetic,
        )),
        _ => Err(Error::invalid(format!(
            "dataset {name:?} not found; set {DATA_DIR_ENV} to a directory containing its files"
        ))),
    }
}
