use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lossbench_core::datasets::{load_dataset, Source};
use lossbench_core::encoders::{adapt_input_width, encode, load_checkpoint, save_checkpoint};
use lossbench_core::graph::{load_node_table, write_node_table};
use lossbench_core::harness::{
    aggregate_ranks, cache_dir_from_env, emit_report, load_rank_tables, rank_metric_table,
    read_summary, run_matrix, seed_split, train, write_summary, ExperimentConfig, MetricTable,
    ReportFormat,
};
use lossbench_core::metrics::{evaluate_all, RowKey};
use lossbench_core::{rng, Architecture, Graph, HybridLossSpec, PreparedGraph};

#[derive(Parser)]
#[command(
    name = "lossbench",
    version,
    about = "Benchmark unsupervised losses for graph encoders"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Load a dataset and print its shape; optionally export it as TSV.
    Ingest {
        /// Dataset name, or `NODES.tsv:EDGES.tsv`.
        spec: String,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Sampling seed (Elliptic subgraph).
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Directory receiving `<name>.nodes.tsv` and `<name>.edges.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one encoder and write its checkpoint.
    Train {
        #[arg(long)]
        arch: Architecture,
        /// Loss spec such as `CrossE_L` or `Contr_l + PMI_L`.
        #[arg(long)]
        loss: HybridLossSpec,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "encoder.ckpt")]
        out: PathBuf,
    },
    /// Embed a dataset with a checkpoint and print its 21 metrics as CSV.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every cell of an experiment matrix.
    Matrix {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Cell cache; `$LOSSBENCH_CACHE_DIR` overrides the default.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        no_cache: bool,
    },
    /// Aggregate per-metric ranks into a summary.
    Rank {
        /// Directory of `metric,model,loss,avg_rank` CSVs.
        #[arg(long, conflicts_with = "metrics")]
        tables: Option<PathBuf>,
        /// Metric table written by `matrix`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write summary and metric tables as CSV or Markdown.
    Report {
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Rank summary CSV; computed from `--metrics` or `--tables` when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        tables: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            ExperimentConfig::load(p).with_context(|| format!("reading config {}", p.display()))
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_graph(spec: &str, dir: Option<&Path>, seed: u64) -> Result<(Graph, String)> {
    if let Some((nodes, edges)) = spec.split_once(':') {
        if Path::new(nodes).is_file() {
            let stem = Path::new(nodes)
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or("graph");
            let name = stem
                .trim_end_matches(".tsv")
                .trim_end_matches(".nodes")
                .to_string();
            let g = load_node_table(nodes, edges)?.with_name(name);
            return Ok((g, format!("files {nodes}, {edges}")));
        }
    }
    let (g, src) = load_dataset(spec, dir, seed)?;
    let src = match src {
        Source::Files(d) => format!("files in {}", d.display()),
        Source::Synthetic => "synthetic stand-in".to_string(),
    };
    Ok((g, src))
}

fn ingest(spec: &str, dir: Option<&Path>, seed: u64, out: Option<&Path>) -> Result<()> {
    let (g, src) = load_graph(spec, dir, seed)?;
    let labeled = g.labeled_nodes().len();
    println!("name\t{}", g.name());
    println!("source\t{src}");
    println!("nodes\t{}", g.n());
    println!("edges\t{}", g.num_edges());
    println!("features\t{}", g.feature_dim());
    println!("classes\t{}", g.num_classes());
    println!("labeled\t{labeled}");
    println!("directed_source\t{}", g.directed_source());
    if let Some(rate) = g.majority_class_rate() {
        println!("majority_rate\t{rate}");
    }
    if let Some(out) = out {
        std::fs::create_dir_all(out)?;
        let key = g.name().to_ascii_lowercase();
        let (n, e) = (
            out.join(format!("{key}.nodes.tsv")),
            out.join(format!("{key}.edges.tsv")),
        );
        write_node_table(&g, &n, &e)?;
        eprintln!("wrote {} and {}", n.display(), e.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    arch: Architecture,
    loss: &HybridLossSpec,
    dataset: &str,
    seed: u64,
    config: Option<&Path>,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    let (g, _) = load_graph(dataset, cfg.data_dir.as_deref(), cfg.data_seed)?;
    let spec = cfg.encoder_spec(arch);
    let run = train(&cfg.train_config(), &spec, &g, loss, seed)?;
    save_checkpoint(out, &spec, &run.params)?;
    println!("epochs_run\t{}", run.epochs_run());
    println!("best_epoch\t{}", run.best_epoch);
    println!("initial_loss\t{}", run.curve[0]);
    println!("best_loss\t{}", run.curve[run.best_epoch]);
    for (l, s) in loss.members().iter().zip(run.gates(loss)) {
        println!("gate.{l}\t{s}");
    }
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn eval_cmd(
    ckpt: &Path,
    dataset: &str,
    seed: u64,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    let (spec, params) = load_checkpoint(ckpt)?;
    let (g, _) = load_graph(dataset, cfg.data_dir.as_deref(), cfg.data_seed)?;
    let params = adapt_input_width(&spec, &params, g.feature_dim());
    let split = seed_split(&cfg, &g, seed)?;
    let train_g = split.train_graph(&g)?;
    let pg = PreparedGraph::new(&train_g, &spec)?;
    let z = encode(&spec, &params, &pg, rng::derive(seed, "encoder.apply", 0))?;
    let v = evaluate_all(
        &z,
        &g,
        Some(&split),
        &cfg.eval_config(),
        rng::derive(seed, "evaluate", 0),
    )?;
    let key = RowKey {
        model: spec.arch.name().to_string(),
        loss: String::new(),
        dataset: g.name().to_string(),
        setting: "eval".to_string(),
        seed,
    };
    let table = MetricTable {
        rows: vec![(key, v)],
    };
    match out {
        Some(p) => table.save(p)?,
        None => print!("{}", table.to_csv_string()),
    }
    Ok(())
}

fn matrix_cmd(config: &Path, out: &Path, cache: Option<PathBuf>, no_cache: bool) -> Result<()> {
    let cfg = load_config(Some(config))?;
    let cache = (!no_cache).then(|| cache.unwrap_or_else(|| cache_dir_from_env("lossbench-cache")));
    let run = run_matrix(&cfg, cache.as_deref())?;
    run.table.save(out)?;
    let failed = run
        .table
        .rows
        .iter()
        .filter(|r| r.1.flags.iter().any(|f| f.starts_with("run:")))
        .count();
    eprintln!(
        "{} rows ({} computed, {} cached, {} failed) -> {}",
        run.table.rows.len(),
        run.computed,
        run.cached,
        failed,
        out.display()
    );
    Ok(())
}

fn summarize(
    tables: Option<&Path>,
    metrics: Option<&Path>,
    top_k: usize,
) -> Result<lossbench_core::harness::Aggregate> {
    let rankings = match (tables, metrics) {
        (Some(dir), _) => load_rank_tables(dir)?,
        (None, Some(m)) => rank_metric_table(&MetricTable::load(m)?),
        (None, None) => bail!("give --tables or --metrics"),
    };
    Ok(aggregate_ranks(&rankings, top_k)?)
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Ingest {
            spec,
            data_dir,
            seed,
            out,
        } => ingest(&spec, data_dir.as_deref(), seed, out.as_deref()),
        Cmd::Train {
            arch,
            loss,
            dataset,
            seed,
            config,
            epochs,
            out,
        } => train_cmd(arch, &loss, &dataset, seed, config.as_deref(), epochs, &out),
        Cmd::Eval {
            ckpt,
            dataset,
            seed,
            config,
            out,
        } => eval_cmd(&ckpt, &dataset, seed, config.as_deref(), out.as_deref()),
        Cmd::Matrix {
            config,
            out,
            cache,
            no_cache,
        } => matrix_cmd(&config, &out, cache, no_cache),
        Cmd::Rank {
            tables,
            metrics,
            top_k,
            out,
        } => {
            let agg = summarize(tables.as_deref(), metrics.as_deref(), top_k)?;
            for f in &agg.flags {
                eprintln!("note: {f}");
            }
            match out {
                Some(p) => write_summary(&agg.summary, std::fs::File::create(&p)?)?,
                None => {
                    let mut buf = Vec::new();
                    write_summary(&agg.summary, &mut buf)?;
                    std::io::stdout().write_all(&buf)?;
                }
            }
            Ok(())
        }
        Cmd::Report {
            format,
            summary,
            metrics,
            tables,
            config,
            top_k,
            out,
        } => {
            let table = metrics.as_deref().map(MetricTable::load).transpose()?;
            let (rows, flags) = match summary {
                Some(p) => (read_summary(std::fs::File::open(&p)?)?, Vec::new()),
                None => {
                    let agg = summarize(tables.as_deref(), metrics.as_deref(), top_k)?;
                    (agg.summary, agg.flags)
                }
            };
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            for p in emit_report(&out, &rows, table.as_ref(), cfg.as_ref(), &flags, format)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}
