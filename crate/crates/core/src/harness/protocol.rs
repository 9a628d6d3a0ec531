//! Transductive and inductive experiment protocols.

use super::config::ExperimentConfig;
use super::train::{train, TrainOutcome};
use crate::encoders::{adapt_input_width, encode, Architecture, PreparedGraph};
use crate::error::{Error, Result};
use crate::graph::{edge_split, EdgeSplit, Graph};
use crate::losses::HybridLossSpec;
use crate::metrics::{evaluate_all, MetricVector, METRIC_COUNT};
use crate::rng;
use crate::tensor::Tensor;

/// Per-metric mean and population standard deviation across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub mean: MetricVector,
    pub std: MetricVector,
    pub runs: Vec<MetricVector>,
}

/// Aggregates per-seed vectors. A metric missing in some runs is averaged
/// over the runs that have it and flagged; missing in all, it stays absent.
pub fn summarize_seeds(runs: Vec<MetricVector>) -> SeedSummary {
    let mut mean = MetricVector::default();
    let mut std = MetricVector::default();
    for k in 0..METRIC_COUNT {
        let xs: Vec<f64> = runs.iter().filter_map(|r| r.values[k]).collect();
        if xs.is_empty() {
            continue;
        }
        if xs.len() < runs.len() {
            let m = crate::metrics::Metric::ALL[k];
            mean.flag(
                m,
                format!(
                    "missing in {} of {} seeds",
                    runs.len() - xs.len(),
                    runs.len()
                ),
            );
        }
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = if m.is_infinite() {
            0.0
        } else {
            xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
        };
        mean.values[k] = Some(m);
        std.values[k] = Some(v.sqrt());
    }
    for r in &runs {
        for f in &r.flags {
            if !mean.flags.contains(f) {
                mean.flags.push(f.clone());
            }
        }
    }
    SeedSummary { mean, std, runs }
}

/// Link-prediction split of `g` for one seed.
pub fn seed_split(cfg: &ExperimentConfig, g: &Graph, seed: u64) -> Result<EdgeSplit> {
    edge_split(g, cfg.lp_holdout, rng::derive(seed, "edge_split", 0))
}

/// Trains on the training edges of `g`, embeds that graph and evaluates.
pub fn transductive_seed(
    cfg: &ExperimentConfig,
    g: &Graph,
    arch: Architecture,
    loss: &HybridLossSpec,
    seed: u64,
) -> Result<(MetricVector, TrainOutcome)> {
    let split = seed_split(cfg, g, seed)?;
    let train_g = split.train_graph(g)?;
    let spec = cfg.encoder_spec(arch);
    let out = train(&cfg.train_config(), &spec, &train_g, loss, seed)?;
    let v = evaluate_all(
        &out.embedding,
        g,
        Some(&split),
        &cfg.eval_config(),
        rng::derive(seed, "evaluate", 0),
    )?;
    Ok((v, out))
}

/// Applies frozen trained parameters to `apply_g`. The universal projection
/// is redrawn from the parameters' own init seed when the input width
/// differs; every other tensor is reused unchanged.
pub fn apply_frozen(
    cfg: &ExperimentConfig,
    arch: Architecture,
    trained: &TrainOutcome,
    apply_g: &Graph,
    seed: u64,
) -> Result<Tensor> {
    let spec = cfg.encoder_spec(arch);
    let params = adapt_input_width(&spec, &trained.params, apply_g.feature_dim());
    let pg = PreparedGraph::new(apply_g, &spec)?;
    encode(&spec, &params, &pg, rng::derive(seed, "encoder.apply", 0))
}

/// Trains on `pretrain_g`, then embeds the training-edge graph of `apply_g`
/// with the frozen encoder and evaluates there. The same graph on both
/// sides reduces to the transductive protocol.
pub fn inductive_seed(
    cfg: &ExperimentConfig,
    pretrain_g: &Graph,
    apply_g: &Graph,
    arch: Architecture,
    loss: &HybridLossSpec,
    seed: u64,
) -> Result<(MetricVector, Tensor)> {
    if std::ptr::eq(pretrain_g, apply_g) {
        return transductive_seed(cfg, apply_g, arch, loss, seed)
            .map(|(v, out)| (v, out.embedding));
    }
    let spec = cfg.encoder_spec(arch);
    let trained = train(&cfg.train_config(), &spec, pretrain_g, loss, seed)?;
    let split = seed_split(cfg, apply_g, seed)?;
    let z = apply_frozen(cfg, arch, &trained, &split.train_graph(apply_g)?, seed)?;
    let v = evaluate_all(
        &z,
        apply_g,
        Some(&split),
        &cfg.eval_config(),
        rng::derive(seed, "evaluate", 0),
    )?;
    Ok((v, z))
}

/// A failed run as a vector of absent metrics carrying the reason.
pub fn failed(reason: &Error) -> MetricVector {
    let mut v = MetricVector::default();
    v.flag("run", format!("failed: {reason}"));
    v
}

pub fn run_transductive(
    cfg: &ExperimentConfig,
    g: &Graph,
    arch: Architecture,
    loss: &HybridLossSpec,
    seeds: &[u64],
) -> Result<SeedSummary> {
    if !g.has_labels() {
        return Err(Error::NoLabeledNode);
    }
    let runs = seeds
        .iter()
        .map(|&s| transductive_seed(cfg, g, arch, loss, s).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_seeds(runs))
}

pub fn run_inductive(
    cfg: &ExperimentConfig,
    pretrain_g: &Graph,
    apply_g: &Graph,
    arch: Architecture,
    loss: &HybridLossSpec,
    seeds: &[u64],
) -> Result<SeedSummary> {
    let runs = seeds
        .iter()
        .map(|&s| inductive_seed(cfg, pretrain_g, apply_g, arch, loss, s).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_seeds(runs))
}
