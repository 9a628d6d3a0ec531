//! Rank aggregation across metrics.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::matrix::MetricTable;
use crate::error::{Error, Result};
use crate::metrics::Metric;

/// One (model, loss) row of a per-metric ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model: String,
    pub loss: String,
    /// Rank averaged over datasets; `None` for a missing cell.
    pub avg_rank: Option<f64>,
}

/// Average ranks of every (model, loss) pair under one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRanking {
    pub metric: String,
    pub entries: Vec<RankEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub model: String,
    pub loss: String,
    /// Mean of the pair's average ranks over the metrics covering it.
    pub avg_rank: f64,
    /// Metrics whose top-k includes the pair.
    pub coverage: usize,
    /// Metrics the pair leads.
    pub top1_wins: usize,
}

/// 1-based ranks of `scores` with ties sharing the mean of their positions.
pub fn average_ranks(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let key = |i: usize| {
        if higher_is_better {
            -scores[i]
        } else {
            scores[i]
        }
    };
    idx.sort_by(|&a, &b| key(a).total_cmp(&key(b)));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j < idx.len() && key(idx[j]) == key(idx[i]) {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Per-metric rankings of a table: rows are averaged over seeds, ranked per
/// dataset with tie-averaged ranks in the metric's direction, and the ranks
/// averaged over the datasets where the pair has a value.
pub fn rank_metric_table(table: &MetricTable) -> Vec<MetricRanking> {
    // (dataset, model, loss) -> per-metric seed values
    let mut cells: BTreeMap<(String, String, String), Vec<Vec<f64>>> = BTreeMap::new();
    for (k, v) in &table.rows {
        let slot = cells
            .entry((k.dataset.clone(), k.model.clone(), k.loss.clone()))
            .or_insert_with(|| vec![Vec::new(); Metric::ALL.len()]);
        for (m, x) in v.values.iter().enumerate() {
            if let Some(x) = x {
                slot[m].push(*x);
            }
        }
    }
    let mut pairs: Vec<(String, String)> = cells
        .keys()
        .map(|(_, m, l)| (m.clone(), l.clone()))
        .collect();
    pairs.sort();
    pairs.dedup();
    let datasets: Vec<String> = {
        let mut d: Vec<String> = cells.keys().map(|k| k.0.clone()).collect();
        d.dedup();
        d
    };
    Metric::ALL
        .iter()
        .map(|&metric| {
            let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
            for d in &datasets {
                let present: Vec<(&(String, String), f64)> = pairs
                    .iter()
                    .filter_map(|p| {
                        let xs =
                            &cells.get(&(d.clone(), p.0.clone(), p.1.clone()))?[metric.index()];
                        (!xs.is_empty()).then(|| (p, xs.iter().sum::<f64>() / xs.len() as f64))
                    })
                    .collect();
                let scores: Vec<f64> = present.iter().map(|p| p.1).collect();
                for ((p, _), r) in present
                    .iter()
                    .zip(average_ranks(&scores, metric.higher_is_better()))
                {
                    let e = sums.entry((*p).clone()).or_insert((0.0, 0));
                    e.0 += r;
                    e.1 += 1;
                }
            }
            MetricRanking {
                metric: metric.id().to_string(),
                entries: pairs
                    .iter()
                    .map(|p| RankEntry {
                        model: p.0.clone(),
                        loss: p.1.clone(),
                        avg_rank: sums.get(p).map(|&(s, c)| s / c as f64),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Reads every `*.csv` in `dir` with columns `metric,model,loss,avg_rank`,
/// in file-name order. Each file may hold several metrics.
pub fn load_rank_tables(dir: impl AsRef<Path>) -> Result<Vec<MetricRanking>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no rank tables in {}",
            dir.display()
        )));
    }
    #[derive(Deserialize)]
    struct Row {
        metric: String,
        model: String,
        loss: String,
        avg_rank: Option<f64>,
    }
    let mut out: Vec<MetricRanking> = Vec::new();
    for f in files {
        let mut rd = csv::Reader::from_path(&f)?;
        for row in rd.deserialize() {
            let r: Row = row?;
            let entry = RankEntry {
                model: r.model,
                loss: r.loss,
                avg_rank: r.avg_rank,
            };
            match out.iter_mut().find(|m| m.metric == r.metric) {
                Some(m) => m.entries.push(entry),
                None => out.push(MetricRanking {
                    metric: r.metric,
                    entries: vec![entry],
                }),
            }
        }
    }
    Ok(out)
}

/// Writes rankings in the `metric,model,loss,avg_rank` layout.
pub fn write_rank_tables(rankings: &[MetricRanking], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "model", "loss", "avg_rank"])?;
    for r in rankings {
        for e in &r.entries {
            let rank = e.avg_rank.map(|x| x.to_string()).unwrap_or_default();
            out.write_record([r.metric.as_str(), &e.model, &e.loss, &rank])?;
        }
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Summary of several rankings, with notes on excluded data.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub summary: Vec<RankSummary>,
    pub flags: Vec<String>,
}

/// Per metric, orders the present rows by average rank (ties by loss, then
/// model) and takes the first `top_k`. A metric where more than `top_k`
/// rows share the best rank cannot single out a top group and is left out.
/// The summary is sorted by AvgRank, then Coverage (descending), model, loss.
pub fn aggregate_ranks(rankings: &[MetricRanking], top_k: usize) -> Result<Aggregate> {
    if rankings.is_empty() {
        return Err(Error::invalid("rank aggregation needs at least one metric"));
    }
    if top_k == 0 {
        return Err(Error::invalid("top_k must be at least 1"));
    }
    let mut flags = Vec::new();
    let mut acc: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for r in rankings {
        let missing = r.entries.iter().filter(|e| e.avg_rank.is_none()).count();
        if missing > 0 {
            flags.push(format!("{}: {missing} missing cell(s) excluded", r.metric));
        }
        let mut rows: Vec<(&RankEntry, f64)> = r
            .entries
            .iter()
            .filter_map(|e| e.avg_rank.map(|x| (e, x)))
            .collect();
        if rows.is_empty() {
            flags.push(format!("{}: no ranked rows", r.metric));
            continue;
        }
        rows.sort_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| (&a.0.loss, &a.0.model).cmp(&(&b.0.loss, &b.0.model)))
        });
        let tied_best = rows.iter().filter(|x| x.1 == rows[0].1).count();
        if tied_best > top_k {
            flags.push(format!(
                "{}: {tied_best} rows tie at the best rank; not discriminative",
                r.metric
            ));
            continue;
        }
        for (pos, (e, rank)) in rows.iter().take(top_k).enumerate() {
            let slot = acc.entry((e.model.clone(), e.loss.clone())).or_default();
            slot.0.push(*rank);
            slot.1 += usize::from(pos == 0);
        }
    }
    let mut summary: Vec<RankSummary> = acc
        .into_iter()
        .map(|((model, loss), (ranks, wins))| RankSummary {
            model,
            loss,
            avg_rank: ranks.iter().sum::<f64>() / ranks.len() as f64,
            coverage: ranks.len(),
            top1_wins: wins,
        })
        .collect();
    summary.sort_by(|a, b| {
        a.avg_rank
            .total_cmp(&b.avg_rank)
            .then(b.coverage.cmp(&a.coverage))
            .then_with(|| (&a.model, &a.loss).cmp(&(&b.model, &b.loss)))
    });
    Ok(Aggregate { summary, flags })
}

/// Reads a `model,loss,avg_rank,coverage,top1_wins` summary.
pub fn read_summary(r: impl std::io::Read) -> Result<Vec<RankSummary>> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes a summary at full precision, header included.
pub fn write_summary(summary: &[RankSummary], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["model", "loss", "avg_rank", "coverage", "top1_wins"])?;
    for s in summary {
        out.write_record([
            s.model.clone(),
            s.loss.clone(),
            s.avg_rank.to_string(),
            s.coverage.to_string(),
            s.top1_wins.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
