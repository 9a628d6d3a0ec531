//! The 21-metric evaluation suite.

mod classification;
mod cluster;
mod link;
mod structure;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use classification::{
    classification_scores, node_cls_probe, stratified_split, ClassificationScores, ConfusionCounts,
    NodeSplit, ProbeConfig, ProbeReport,
};
pub use cluster::{calinski_harabasz, kmeans, rankme, self_cluster, silhouette, KMeans};
pub use link::{
    auroc, average_precision, bce, dot_scores, link_pred_eval, link_scores, reconstruction_bce,
    reconstruction_pairs, sigmoid, LinkScores, BCE_CLAMP,
};
pub use structure::{
    adjacency_correlations, coherence, embedding_neighbors, graph_neighbors, knn_consistency,
    AdjacencyCorrelations,
};

use crate::error::{Error, Result};
use crate::graph::{pmi_matrix, EdgeSplit, Graph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    NodeClsAccuracy,
    NodeClsPrecision,
    NodeClsRecall,
    NodeClsF1,
    LpAccuracy,
    LpPrecision,
    LpRecall,
    LpF1,
    LpAuroc,
    LpAupr,
    LpSpecificity,
    CosineAdjCorr,
    DotAdjCorr,
    EuclideanAdjCorr,
    ReconstructionBce,
    Silhouette,
    CalinskiHarabasz,
    KnnConsistency,
    Coherence,
    SelfCluster,
    RankMe,
}

pub const METRIC_COUNT: usize = 21;

impl Metric {
    pub const ALL: [Metric; METRIC_COUNT] = [
        Metric::NodeClsAccuracy,
        Metric::NodeClsPrecision,
        Metric::NodeClsRecall,
        Metric::NodeClsF1,
        Metric::LpAccuracy,
        Metric::LpPrecision,
        Metric::LpRecall,
        Metric::LpF1,
        Metric::LpAuroc,
        Metric::LpAupr,
        Metric::LpSpecificity,
        Metric::CosineAdjCorr,
        Metric::DotAdjCorr,
        Metric::EuclideanAdjCorr,
        Metric::ReconstructionBce,
        Metric::Silhouette,
        Metric::CalinskiHarabasz,
        Metric::KnnConsistency,
        Metric::Coherence,
        Metric::SelfCluster,
        Metric::RankMe,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Metric::NodeClsAccuracy => "node_cls_accuracy",
            Metric::NodeClsPrecision => "node_cls_precision",
            Metric::NodeClsRecall => "node_cls_recall",
            Metric::NodeClsF1 => "node_cls_f1",
            Metric::LpAccuracy => "LP_accuracy",
            Metric::LpPrecision => "LP_precision",
            Metric::LpRecall => "LP_recall",
            Metric::LpF1 => "LP_f1",
            Metric::LpAuroc => "LP_auroc",
            Metric::LpAupr => "LP_aupr",
            Metric::LpSpecificity => "LP_specificity",
            Metric::CosineAdjCorr => "cosine_adj_corr",
            Metric::DotAdjCorr => "dot_adj_corr",
            Metric::EuclideanAdjCorr => "euclidean_adj_corr",
            Metric::ReconstructionBce => "graph_reconstruction_bce_loss",
            Metric::Silhouette => "silhouette",
            Metric::CalinskiHarabasz => "calinski_harabasz",
            Metric::KnnConsistency => "knn_consistency",
            Metric::Coherence => "coherence",
            Metric::SelfCluster => "selfCluster",
            Metric::RankMe => "rankme",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn higher_is_better(self) -> bool {
        !matches!(self, Metric::ReconstructionBce | Metric::SelfCluster)
    }

    /// Whether the reported value is the raw statistic times 100.
    pub fn scaled(self) -> bool {
        !matches!(
            self,
            Metric::CalinskiHarabasz | Metric::SelfCluster | Metric::RankMe
        )
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.id() == s.trim())
            .ok_or_else(|| Error::invalid(format!("unknown metric {s:?}")))
    }
}

/// One reported value per metric id. `None` marks a metric that could not
/// be computed; `flags` says why, as `metric_or_family:reason` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub values: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

impl Default for MetricVector {
    fn default() -> Self {
        MetricVector {
            values: vec![None; METRIC_COUNT],
            flags: Vec::new(),
        }
    }
}

impl MetricVector {
    pub fn get(&self, m: Metric) -> Option<f64> {
        self.values[m.index()]
    }

    pub fn set(&mut self, m: Metric, v: Option<f64>) {
        self.values[m.index()] = v;
    }

    pub fn flag(&mut self, what: impl fmt::Display, reason: impl fmt::Display) {
        self.flags.push(format!("{what}:{reason}"));
    }

    pub fn is_complete(&self) -> bool {
        self.values.iter().all(Option::is_some)
    }
}

pub const CSV_KEYS: [&str; 5] = ["model", "loss", "dataset", "setting", "seed"];

pub fn csv_header() -> Vec<String> {
    CSV_KEYS
        .iter()
        .map(|s| s.to_string())
        .chain(Metric::ALL.iter().map(|m| m.id().to_string()))
        .chain(std::iter::once("flags".to_string()))
        .collect()
}

/// Shortest round-trip decimal; empty for a missing value.
pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x == f64::INFINITY => "inf".into(),
        Some(x) if x == f64::NEG_INFINITY => "-inf".into(),
        Some(x) => format!("{x}"),
    }
}

pub fn parse_value(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::invalid(format!("bad metric value {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowKey {
    pub model: String,
    pub loss: String,
    pub dataset: String,
    pub setting: String,
    pub seed: u64,
}

impl MetricVector {
    pub fn csv_record(&self, key: &RowKey) -> Vec<String> {
        [
            key.model.clone(),
            key.loss.clone(),
            key.dataset.clone(),
            key.setting.clone(),
            key.seed.to_string(),
        ]
        .into_iter()
        .chain(self.values.iter().map(|v| format_value(*v)))
        .chain(std::iter::once(self.flags.join(";")))
        .collect()
    }

    pub fn from_csv_record(fields: &[String]) -> Result<(RowKey, MetricVector)> {
        let want = CSV_KEYS.len() + METRIC_COUNT + 1;
        if fields.len() != want {
            return Err(Error::invalid(format!(
                "expected {want} fields, got {}",
                fields.len()
            )));
        }
        let key = RowKey {
            model: fields[0].clone(),
            loss: fields[1].clone(),
            dataset: fields[2].clone(),
            setting: fields[3].clone(),
            seed: fields[4]
                .parse()
                .map_err(|_| Error::invalid(format!("bad seed {:?}", fields[4])))?,
        };
        let values = fields[5..5 + METRIC_COUNT]
            .iter()
            .map(|s| parse_value(s))
            .collect::<Result<_>>()?;
        let flags = fields[want - 1]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        Ok((key, MetricVector { values, flags }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub probe: ProbeConfig,
    pub knn_k: usize,
    pub lp_threshold: f64,
    pub kmeans_max_iter: usize,
    /// Cluster count when the graph carries no labels.
    pub default_clusters: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            probe: ProbeConfig::default(),
            knn_k: 10,
            lp_threshold: 0.5,
            kmeans_max_iter: 300,
            default_clusters: 7,
        }
    }
}

/// Computes every metric of `z` against `g`. Link prediction uses the
/// held-out pairs of `split` and is flagged absent without one; the
/// classification family is flagged absent on unlabeled graphs. Failures of
/// individual metrics are flagged and never abort the others.
pub fn evaluate_all(
    z: &Tensor,
    g: &Graph,
    split: Option<&EdgeSplit>,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MetricVector> {
    if z.rows() != g.n() {
        return Err(Error::invalid(format!(
            "embedding has {} rows for {} nodes",
            z.rows(),
            g.n()
        )));
    }
    if !z.all_finite() {
        return Err(Error::NonFinite);
    }
    let sub = |name: &str| rng::derive(seed, name, 0);
    let pct = |x: f64| 100.0 * x;
    let mut out = MetricVector::default();

    if g.has_labels() {
        let probe = stratified_split(
            g.labels(),
            cfg.probe.train_frac,
            cfg.probe.val_frac,
            sub("eval.node_split"),
        )
        .and_then(|s| node_cls_probe(z, g.labels(), &s, &cfg.probe, sub("eval.probe")));
        match probe {
            Ok(r) => {
                out.set(Metric::NodeClsAccuracy, Some(pct(r.mean.accuracy)));
                out.set(Metric::NodeClsPrecision, Some(pct(r.mean.precision)));
                out.set(Metric::NodeClsRecall, Some(pct(r.mean.recall)));
                out.set(Metric::NodeClsF1, Some(pct(r.mean.f1)));
                for c in r.missing_classes {
                    out.flag("node_cls", format!("class {c} absent from test"));
                }
            }
            Err(e) => out.flag("node_cls", e),
        }
    } else {
        out.flag("node_cls", "absent");
    }

    match split.map(|s| link_pred_eval(z, s, cfg.lp_threshold)) {
        Some(Ok(s)) => {
            out.set(Metric::LpAccuracy, Some(pct(s.accuracy)));
            out.set(Metric::LpPrecision, Some(pct(s.precision)));
            out.set(Metric::LpRecall, Some(pct(s.recall)));
            out.set(Metric::LpF1, Some(pct(s.f1)));
            out.set(Metric::LpAuroc, Some(pct(s.auroc)));
            out.set(Metric::LpAupr, Some(pct(s.aupr)));
            out.set(Metric::LpSpecificity, Some(pct(s.specificity)));
        }
        Some(Err(e)) => out.flag("LP", e),
        None => out.flag("LP", "absent"),
    }

    let corr = adjacency_correlations(z, g);
    for (m, v) in [
        (Metric::CosineAdjCorr, corr.cosine),
        (Metric::DotAdjCorr, corr.dot),
        (Metric::EuclideanAdjCorr, corr.euclidean),
    ] {
        if v.is_none() {
            out.flag(m, "degenerate");
        }
        out.set(m, Some(pct(v.unwrap_or(0.0))));
    }

    match reconstruction_bce(z, g, sub("eval.reconstruction")) {
        Ok(v) => out.set(Metric::ReconstructionBce, Some(pct(v))),
        Err(e) => out.flag(Metric::ReconstructionBce, e),
    }

    let k = if g.has_labels() {
        g.num_classes()
    } else {
        cfg.default_clusters
    };
    match kmeans(z, k.min(g.n()), sub("eval.kmeans"), cfg.kmeans_max_iter) {
        Ok(km) => {
            let a = &km.assignment;
            match silhouette(z, a) {
                Ok(v) => out.set(Metric::Silhouette, Some(pct(v))),
                Err(e) => out.flag(Metric::Silhouette, e),
            }
            match calinski_harabasz(z, a) {
                Ok(v) => {
                    if v.is_infinite() {
                        out.flag(Metric::CalinskiHarabasz, "inf");
                    }
                    out.set(Metric::CalinskiHarabasz, Some(v));
                }
                Err(e) => out.flag(Metric::CalinskiHarabasz, e),
            }
            match coherence(&pmi_matrix(g, true), a) {
                Some(v) => out.set(Metric::Coherence, Some(pct(v))),
                None => {
                    out.flag(Metric::Coherence, "degenerate");
                    out.set(Metric::Coherence, Some(0.0));
                }
            }
            match self_cluster(z, a) {
                Ok(v) => out.set(Metric::SelfCluster, Some(v)),
                Err(e) => out.flag(Metric::SelfCluster, e),
            }
        }
        Err(e) => out.flag("clustering", e),
    }

    out.set(
        Metric::KnnConsistency,
        Some(pct(knn_consistency(z, g, cfg.knn_k))),
    );

    match rankme(z) {
        Ok(v) => out.set(Metric::RankMe, Some(v)),
        Err(e) => out.flag(Metric::RankMe, e),
    }
    Ok(out)
}
