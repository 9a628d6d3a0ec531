//! Experiment matrix execution with a content-addressed cell cache.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::{ExperimentConfig, Setting};
use super::protocol::{failed, inductive_seed, transductive_seed};
use crate::datasets::load_dataset;
use crate::encoders::Architecture;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::losses::HybridLossSpec;
use crate::metrics::{csv_header, MetricVector, RowKey};

pub const CACHE_DIR_ENV: &str = "LOSSBENCH_CACHE_DIR";
const CACHE_FORMAT: &str = "lossbench-cell-v1";

/// Rows of per-seed metric vectors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricTable {
    pub rows: Vec<(RowKey, MetricVector)>,
}

impl MetricTable {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(csv_header())?;
        for (k, v) in &self.rows {
            out.write_record(v.csv_record(k))?;
        }
        out.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("utf-8 csv")
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header != csv_header() {
            return Err(Error::invalid(
                "metric table header does not match the 21-metric schema",
            ));
        }
        let mut rows = Vec::new();
        for rec in rd.records() {
            let fields: Vec<String> = rec?.iter().map(str::to_string).collect();
            rows.push(MetricVector::from_csv_record(&fields)?);
        }
        Ok(MetricTable { rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f)
    }
}

/// One unit of work: a model, an objective, a dataset (or pair) and a seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub arch: Architecture,
    pub loss: HybridLossSpec,
    pub source: CellData,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellData {
    Single(String),
    Pair { pretrain: String, apply: String },
}

/// Every cell of the configured matrix in a fixed order: dataset or pair,
/// then architecture, loss spec and seed.
pub fn matrix_cells(cfg: &ExperimentConfig) -> Result<Vec<Cell>> {
    let sources: Vec<CellData> = match cfg.setting {
        Setting::Transductive => cfg.datasets.iter().cloned().map(CellData::Single).collect(),
        Setting::Inductive => cfg
            .pairs
            .iter()
            .map(|p| CellData::Pair {
                pretrain: p.pretrain.clone(),
                apply: p.apply.clone(),
            })
            .collect(),
    };
    let losses = cfg.loss_specs()?;
    let mut cells = Vec::new();
    for source in &sources {
        for &arch in &cfg.architectures {
            for loss in &losses {
                for &seed in &cfg.seeds {
                    cells.push(Cell {
                        arch,
                        loss: loss.clone(),
                        source: source.clone(),
                        seed,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Hex SHA-256 of the canonical JSON of everything the cell's result
/// depends on: the config minus the matrix axes, the cell coordinates and
/// the crate version.
pub fn cell_hash(cfg: &ExperimentConfig, cell: &Cell) -> String {
    let mut base = cfg.clone();
    base.datasets.clear();
    base.pairs.clear();
    base.architectures.clear();
    base.losses.clear();
    base.seeds.clear();
    base.max_order = 0;
    base.data_dir = None;
    let source = match &cell.source {
        CellData::Single(d) => vec![d.clone()],
        CellData::Pair { pretrain, apply } => vec![pretrain.clone(), apply.clone()],
    };
    // serde_json maps are ordered by key, so this text is canonical
    let doc = serde_json::json!({
        "format": CACHE_FORMAT,
        "version": env!("CARGO_PKG_VERSION"),
        "config": serde_json::to_value(&base).expect("config serializes"),
        "arch": cell.arch.name(),
        "loss": cell.loss.name(),
        "source": source,
        "seed": cell.seed,
    });
    let digest = Sha256::digest(doc.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `$LOSSBENCH_CACHE_DIR` when set, otherwise `fallback`.
pub fn cache_dir_from_env(fallback: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| fallback.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRun {
    pub table: MetricTable,
    pub computed: usize,
    pub cached: usize,
}

fn read_cached(path: &Path) -> Option<(RowKey, MetricVector)> {
    let table = MetricTable::load(path).ok()?;
    table.rows.into_iter().next()
}

fn write_cached(path: &Path, row: &(RowKey, MetricVector)) -> Result<()> {
    // write then rename, so an interrupted run never leaves a partial cell
    let tmp = path.with_extension("tmp");
    MetricTable {
        rows: vec![row.clone()],
    }
    .save(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every cell, reusing cached cells under `cache` when given. Cells
/// run concurrently; failures become flagged rows with absent metrics.
/// Rows come back in [`matrix_cells`] order.
pub fn run_matrix(cfg: &ExperimentConfig, cache: Option<&Path>) -> Result<MatrixRun> {
    cfg.validate()?;
    let cells = matrix_cells(cfg)?;
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut names: Vec<&str> = Vec::new();
    for c in &cells {
        match &c.source {
            CellData::Single(d) => names.push(d),
            CellData::Pair { pretrain, apply } => {
                names.push(pretrain);
                names.push(apply);
            }
        }
    }
    names.sort_unstable();
    names.dedup();
    let graphs: BTreeMap<&str, std::result::Result<Graph, String>> = names
        .into_iter()
        .map(|n| {
            (
                n,
                load_dataset(n, cfg.data_dir.as_deref(), cfg.data_seed)
                    .map(|r| r.0)
                    .map_err(|e| e.to_string()),
            )
        })
        .collect();
    let graph = |n: &str| -> Result<&Graph> {
        graphs[n]
            .as_ref()
            .map_err(|e| Error::invalid(format!("dataset {n:?}: {e}")))
    };

    let results: Vec<(RowKey, MetricVector, bool)> = cells
        .par_iter()
        .map(|cell| {
            let path = cache.map(|d| d.join(format!("{}.csv", cell_hash(cfg, cell))));
            if let Some(hit) = path.as_deref().and_then(read_cached) {
                return Ok((hit.0, hit.1, true));
            }
            let (dataset, outcome) = match &cell.source {
                CellData::Single(d) => {
                    let name = graph(d).map_or_else(|_| d.clone(), |g| g.name().to_string());
                    let r = graph(d)
                        .and_then(|g| transductive_seed(cfg, g, cell.arch, &cell.loss, cell.seed));
                    (name, r.map(|r| r.0))
                }
                CellData::Pair { pretrain, apply } => {
                    let show =
                        |n: &String| graph(n).map_or_else(|_| n.clone(), |g| g.name().to_string());
                    let name = format!("{} ↓ {}", show(pretrain), show(apply));
                    let r = graph(pretrain).and_then(|p| {
                        graph(apply).and_then(|a| {
                            inductive_seed(cfg, p, a, cell.arch, &cell.loss, cell.seed)
                        })
                    });
                    (name, r.map(|r| r.0))
                }
            };
            let key = RowKey {
                model: cell.arch.name().to_string(),
                loss: cell.loss.name(),
                dataset,
                setting: cfg.setting.name().to_string(),
                seed: cell.seed,
            };
            let v = outcome.unwrap_or_else(|e| failed(&e));
            let row = (key, v);
            if let Some(p) = &path {
                write_cached(p, &row)?;
            }
            Ok((row.0, row.1, false))
        })
        .collect::<Result<Vec<_>>>()?;

    let cached = results.iter().filter(|r| r.2).count();
    Ok(MatrixRun {
        computed: results.len() - cached,
        cached,
        table: MetricTable {
            rows: results.into_iter().map(|(k, v, _)| (k, v)).collect(),
        },
    })
}
