//! Training loop, experiment protocols, matrix runs, rank aggregation and reports.

mod config;
mod matrix;
mod protocol;
mod rank;
mod report;
mod train;

pub use config::{DatasetPair, ExperimentConfig, Setting};
pub use matrix::{
    cache_dir_from_env, cell_hash, matrix_cells, run_matrix, Cell, CellData, MatrixRun,
    MetricTable, CACHE_DIR_ENV,
};
pub use protocol::{
    apply_frozen, failed, inductive_seed, run_inductive, run_transductive, seed_split,
    summarize_seeds, transductive_seed, SeedSummary,
};
pub use rank::{
    aggregate_ranks, average_ranks, load_rank_tables, rank_metric_table, read_summary,
    write_rank_tables, write_summary, Aggregate, MetricRanking, RankEntry, RankSummary,
};
pub use report::{
    emit_report, metric_tables_markdown, round_half_even, summary_markdown, ReportFormat,
};
pub use train::{train, train_observed, TrainConfig, TrainOutcome};
