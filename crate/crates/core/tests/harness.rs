mod common;

use std::path::Path;

use lossbench_core::datasets::{load_dataset, two_community};
use lossbench_core::harness::*;
use lossbench_core::metrics::{Metric, MetricVector, RowKey, METRIC_COUNT};
use lossbench_core::{Architecture, BaseLoss, HybridLossSpec};
use proptest::prelude::*;

fn spec(s: &str) -> HybridLossSpec {
    s.parse().unwrap()
}

fn toy_config() -> ExperimentConfig {
    ExperimentConfig {
        datasets: vec!["toy".into()],
        architectures: vec![Architecture::Gcn, Architecture::Gin],
        losses: vec![spec("PMI_L"), spec("CrossE_L")],
        seeds: vec![1],
        epochs: 6,
        probe_epochs: 20,
        probe_repeats: 1,
        kmeans_max_iter: 50,
        ..ExperimentConfig::default()
    }
}

fn train_cfg(epochs: usize, lr: f64) -> TrainConfig {
    let mut c = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    c.adam.lr = lr;
    c
}

// ---- train ----

#[test]
fn frozen_loss_stops_after_patience_plus_one_epochs() {
    let g = two_community(30, 6, 3).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Gcn);
    for patience in [1, 4, 10] {
        let cfg = TrainConfig {
            patience,
            ..train_cfg(500, 0.0)
        };
        let out = train(&cfg, &enc, &g, &spec("PMI_L"), 7).unwrap();
        assert_eq!(out.epochs_run(), patience + 1);
        assert_eq!(out.best_epoch, 0);
        assert!(out.curve.iter().all(|&x| x == out.curve[0]));
    }
}

#[test]
fn improving_loss_runs_every_epoch() {
    let g = two_community(30, 6, 3).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Gcn);
    let out = train(&train_cfg(80, 1e-3), &enc, &g, &spec("PMI_L"), 2).unwrap();
    assert!(
        out.curve.windows(2).all(|w| w[1] < w[0] - 1e-6),
        "curve not strictly improving"
    );
    assert_eq!(out.epochs_run(), 80);
    assert_eq!(out.best_epoch, 79);
}

#[test]
fn gin_dae_descends_on_two_communities() {
    let g = two_community(30, 6, 11).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Gin);
    let out = train(&train_cfg(100, 1e-3), &enc, &g, &spec("CrossE_L"), 5).unwrap();
    let first = out.curve[0];
    let best = out.curve[out.best_epoch];
    assert!(best < first, "best {best} vs initial {first}");
    assert!(out.curve.last().unwrap() < &first);
    assert_eq!(out.embedding.shape(), (30, 128));
}

#[test]
fn training_is_deterministic_per_seed() {
    let g = two_community(24, 5, 1).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Sage);
    let l = spec("Contr_l + Triplet_L");
    let a = train(&train_cfg(8, 1e-2), &enc, &g, &l, 9).unwrap();
    let b = train(&train_cfg(8, 1e-2), &enc, &g, &l, 9).unwrap();
    let c = train(&train_cfg(8, 1e-2), &enc, &g, &l, 10).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.embedding.data(), b.embedding.data());
    assert_ne!(a.embedding.data(), c.embedding.data());
}

#[test]
fn gates_stay_open_interval_and_move() {
    let g = two_community(24, 5, 4).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Gcn);
    let l = spec("Contr_l + CrossE_L + PMI_L + PR_L + Triplet_L");
    let mut seen = 0;
    let cfg = TrainConfig {
        patience: 1000,
        ..train_cfg(30, 1e-2)
    };
    let out = train_observed(&cfg, &enc, &g, &l, 3, |_, p| {
        for m in l.members() {
            let theta = p.get(&m.gate_name()).unwrap().item();
            let s = 1.0 / (1.0 + (-theta).exp());
            assert!(s > 0.0 && s < 1.0);
        }
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 30);
    let gates = out.gates(&l);
    assert_eq!(gates.len(), 5);
    assert!(gates.iter().any(|&s| (s - 0.5).abs() > 1e-6));
}

#[test]
fn zero_epochs_rejected() {
    let g = two_community(12, 4, 0).unwrap();
    let enc = ExperimentConfig::default().encoder_spec(Architecture::Gcn);
    assert!(train(&train_cfg(0, 1e-3), &enc, &g, &spec("PMI_L"), 0).is_err());
}

// ---- protocols ----

fn injected(vals: &[f64]) -> MetricVector {
    let mut v = MetricVector::default();
    for (k, m) in Metric::ALL.iter().enumerate() {
        v.set(*m, Some(vals[0] + k as f64 * vals[1]));
    }
    v
}

#[test]
fn seed_summary_matches_hand_arithmetic() {
    let runs = vec![
        injected(&[1.0, 1.0]),
        injected(&[2.0, 2.0]),
        injected(&[6.0, 0.0]),
    ];
    let s = summarize_seeds(runs);
    // metric 0: values 1, 2, 6 -> mean 3, population var (4+1+9)/3
    assert_eq!(s.mean.values[0], Some(3.0));
    assert!((s.std.values[0].unwrap() - (14.0f64 / 3.0).sqrt()).abs() < 1e-15);
    // metric 2: values 3, 6, 6 -> mean 5, var (4+1+1)/3 = 2
    assert_eq!(s.mean.values[2], Some(5.0));
    assert!((s.std.values[2].unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(s.runs.len(), 3);
}

#[test]
fn one_seed_has_zero_std() {
    let s = summarize_seeds(vec![injected(&[0.3, 0.7])]);
    assert!(s.std.values.iter().all(|x| *x == Some(0.0)));
    assert_eq!(s.mean.values, injected(&[0.3, 0.7]).values);
}

#[test]
fn partially_missing_metric_is_flagged() {
    let mut a = injected(&[1.0, 0.0]);
    a.set(Metric::RankMe, None);
    let s = summarize_seeds(vec![a, injected(&[3.0, 0.0])]);
    assert_eq!(s.mean.get(Metric::RankMe), Some(3.0));
    assert!(s.mean.flags.iter().any(|f| f.starts_with("rankme:")));
    let all_missing = summarize_seeds(vec![MetricVector::default()]);
    assert!(all_missing.mean.values.iter().all(Option::is_none));
}

#[test]
fn transductive_run_populates_every_metric() {
    let cfg = toy_config();
    let (g, _) = load_dataset("toy", None, 0).unwrap();
    let s = run_transductive(&cfg, &g, Architecture::Gcn, &spec("PMI_L"), &[1, 2]).unwrap();
    assert!(s.mean.is_complete(), "{:?}", s.mean.flags);
    assert!(s.std.values.iter().all(|x| x.unwrap() >= 0.0));
    assert_eq!(s.runs.len(), 2);
}

#[test]
fn transductive_requires_labels() {
    let (g, _) = load_dataset("toy", None, 0).unwrap();
    let unlabeled =
        lossbench_core::Graph::new("u", g.n(), g.edges().to_vec(), g.features().clone(), None)
            .unwrap();
    let r = run_transductive(
        &toy_config(),
        &unlabeled,
        Architecture::Gcn,
        &spec("PMI_L"),
        &[1],
    );
    assert!(r.is_err());
}

#[test]
fn inductive_embeds_apply_graph_across_widths() {
    let cfg = toy_config();
    let (p, _) = load_dataset("toy", None, 0).unwrap();
    let (a, _) = load_dataset("toy-b", None, 0).unwrap();
    assert_ne!(p.feature_dim(), a.feature_dim());
    for arch in Architecture::EVERY {
        let (v, z) = inductive_seed(&cfg, &p, &a, arch, &spec("CrossE_L"), 1).unwrap();
        assert_eq!(z.shape(), (a.n(), 128), "{arch:?}");
        assert!(v.is_complete(), "{arch:?}: {:?}", v.flags);
    }
}

#[test]
fn inductive_on_same_graph_is_transductive() {
    let cfg = toy_config();
    let (g, _) = load_dataset("toy", None, 0).unwrap();
    let (vi, zi) = inductive_seed(&cfg, &g, &g, Architecture::Gin, &spec("PMI_L"), 4).unwrap();
    let (vt, out) = transductive_seed(&cfg, &g, Architecture::Gin, &spec("PMI_L"), 4).unwrap();
    assert_eq!(zi.data(), out.embedding.data());
    assert_eq!(vi, vt);
}

// ---- matrix ----

#[test]
fn full_matrix_has_217_cells_per_dataset_seed() {
    let cfg = ExperimentConfig {
        seeds: vec![1],
        ..ExperimentConfig::default()
    };
    assert_eq!(matrix_cells(&cfg).unwrap().len(), 217);
    let cfg = ExperimentConfig {
        seeds: vec![1, 2],
        datasets: vec!["Cora".into(), "Citeseer".into()],
        ..ExperimentConfig::default()
    };
    assert_eq!(matrix_cells(&cfg).unwrap().len(), 868);
}

#[test]
fn cell_hashes_are_distinct_and_stable() {
    let cfg = toy_config();
    let cells = matrix_cells(&cfg).unwrap();
    let hashes: Vec<String> = cells.iter().map(|c| cell_hash(&cfg, c)).collect();
    let mut uniq = hashes.clone();
    uniq.sort();
    uniq.dedup();
    assert_eq!(uniq.len(), hashes.len());
    assert_eq!(hashes[0], cell_hash(&cfg.clone(), &cells[0]));
    let other = ExperimentConfig {
        epochs: 7,
        ..cfg.clone()
    };
    assert_ne!(hashes[0], cell_hash(&other, &cells[0]));
    // the matrix axes do not enter a cell's own hash
    let wider = ExperimentConfig {
        seeds: vec![1, 2, 3],
        ..cfg.clone()
    };
    assert_eq!(hashes[0], cell_hash(&wider, &cells[0]));
}

#[test]
fn mini_matrix_is_byte_deterministic() {
    let cfg = toy_config();
    let a = run_matrix(&cfg, None).unwrap();
    let b = run_matrix(&cfg, None).unwrap();
    assert_eq!(a.table.rows.len(), 4);
    assert_eq!(a.table.to_csv_string(), b.table.to_csv_string());
    let keys: Vec<(String, String)> = a
        .table
        .rows
        .iter()
        .map(|r| (r.0.model.clone(), r.0.loss.clone()))
        .collect();
    assert_eq!(
        keys,
        [
            ("GCN", "PMI_L"),
            ("GCN", "CrossE_L"),
            ("GIN", "PMI_L"),
            ("GIN", "CrossE_L")
        ]
        .map(|(m, l)| (m.to_string(), l.to_string()))
    );
    assert!(a
        .table
        .rows
        .iter()
        .all(|r| r.0.dataset == "Toy" && r.0.setting == "transductive"));
}

#[test]
fn resumed_matrix_recomputes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config();
    let first = run_matrix(&cfg, Some(dir.path())).unwrap();
    assert_eq!((first.computed, first.cached), (4, 0));
    let again = run_matrix(&cfg, Some(dir.path())).unwrap();
    assert_eq!((again.computed, again.cached), (0, 4));
    assert_eq!(first.table.to_csv_string(), again.table.to_csv_string());
    // losing one cell recomputes exactly that cell
    let cells = matrix_cells(&cfg).unwrap();
    std::fs::remove_file(
        dir.path()
            .join(format!("{}.csv", cell_hash(&cfg, &cells[2]))),
    )
    .unwrap();
    let partial = run_matrix(&cfg, Some(dir.path())).unwrap();
    assert_eq!((partial.computed, partial.cached), (1, 3));
    assert_eq!(first.table, partial.table);
}

#[test]
fn failed_cells_are_flagged_not_fatal() {
    let cfg = ExperimentConfig {
        datasets: vec!["toy".into(), "no-such-graph".into()],
        architectures: vec![Architecture::Gcn],
        losses: vec![spec("PMI_L")],
        ..toy_config()
    };
    let run = run_matrix(&cfg, None).unwrap();
    assert_eq!(run.table.rows.len(), 2);
    let bad = &run.table.rows[1].1;
    assert!(bad.values.iter().all(Option::is_none));
    assert!(bad.flags.iter().any(|f| f.starts_with("run:failed")));
    assert!(run.table.rows[0].1.is_complete());
}

#[test]
fn inductive_matrix_keys_use_arrow() {
    let cfg = ExperimentConfig {
        setting: Setting::Inductive,
        pairs: vec![DatasetPair {
            pretrain: "toy".into(),
            apply: "toy-b".into(),
        }],
        architectures: vec![Architecture::Gcn],
        losses: vec![spec("PMI_L")],
        ..toy_config()
    };
    let run = run_matrix(&cfg, None).unwrap();
    assert_eq!(run.table.rows[0].0.dataset, "Toy ↓ ToyB");
    assert_eq!(run.table.rows[0].0.setting, "inductive");
}

// ---- ranks ----

#[test]
fn average_ranks_share_ties() {
    assert_eq!(
        average_ranks(&[0.9, 0.5, 0.9, 0.1], true),
        vec![1.5, 3.0, 1.5, 4.0]
    );
    assert_eq!(
        average_ranks(&[0.9, 0.5, 0.9, 0.1], false),
        vec![3.5, 2.0, 3.5, 1.0]
    );
    assert_eq!(average_ranks(&[2.0, 2.0, 2.0], true), vec![2.0; 3]);
    assert!(average_ranks(&[], true).is_empty());
}

fn row(
    model: &str,
    loss: &str,
    dataset: &str,
    seed: u64,
    vals: &[(Metric, f64)],
) -> (RowKey, MetricVector) {
    let mut v = MetricVector::default();
    for &(m, x) in vals {
        v.set(m, Some(x));
    }
    (
        RowKey {
            model: model.into(),
            loss: loss.into(),
            dataset: dataset.into(),
            setting: "transductive".into(),
            seed,
        },
        v,
    )
}

fn entry<'a>(r: &'a [MetricRanking], metric: Metric, model: &str) -> &'a RankEntry {
    r.iter()
        .find(|x| x.metric == metric.id())
        .unwrap()
        .entries
        .iter()
        .find(|e| e.model == model)
        .unwrap()
}

#[test]
fn hand_ranked_micro_fixture() {
    use Metric::{NodeClsAccuracy as Acc, SelfCluster as Sc};
    // accuracy (higher better) and selfCluster (lower better) on two datasets
    let table = MetricTable {
        rows: vec![
            row("A", "L", "D1", 1, &[(Acc, 80.0), (Sc, -0.5)]),
            row("A", "L", "D1", 2, &[(Acc, 70.0), (Sc, -0.5)]),
            row("B", "L", "D1", 1, &[(Acc, 75.0), (Sc, -0.9)]),
            row("C", "L", "D1", 1, &[(Acc, 60.0), (Sc, -0.5)]),
            row("A", "L", "D2", 1, &[(Acc, 50.0), (Sc, 0.1)]),
            row("B", "L", "D2", 1, &[(Acc, 55.0), (Sc, 0.2)]),
            row("C", "L", "D2", 1, &[(Acc, 55.0), (Sc, 0.3)]),
        ],
    };
    let r = rank_metric_table(&table);
    assert_eq!(r.len(), METRIC_COUNT);
    // D1 acc: A 75 (seed mean) ties B 75 -> 1.5, 1.5, C 3; D2: B,C tie 1.5, A 3
    assert_eq!(entry(&r, Acc, "A").avg_rank, Some((1.5 + 3.0) / 2.0));
    assert_eq!(entry(&r, Acc, "B").avg_rank, Some((1.5 + 1.5) / 2.0));
    assert_eq!(entry(&r, Acc, "C").avg_rank, Some((3.0 + 1.5) / 2.0));
    // D1 sc: B 1, A,C 2.5; D2: A 1, B 2, C 3
    assert_eq!(entry(&r, Sc, "A").avg_rank, Some((2.5 + 1.0) / 2.0));
    assert_eq!(entry(&r, Sc, "B").avg_rank, Some((1.0 + 2.0) / 2.0));
    assert_eq!(entry(&r, Sc, "C").avg_rank, Some((2.5 + 3.0) / 2.0));
    assert_eq!(entry(&r, Metric::RankMe, "A").avg_rank, None);

    let ranked: Vec<MetricRanking> = r
        .into_iter()
        .filter(|m| m.metric == Acc.id() || m.metric == Sc.id())
        .collect();
    let agg = aggregate_ranks(&ranked, 2).unwrap();
    let get = |m: &str| agg.summary.iter().find(|s| s.model == m).unwrap().clone();
    // acc top-2: B 1.5, A 2.25 (A before C by name at equal rank); sc top-2: B 1.5, A 1.75
    assert_eq!(get("B").avg_rank, 1.5);
    assert_eq!((get("B").coverage, get("B").top1_wins), (2, 2));
    assert_eq!(get("A").avg_rank, (2.25 + 1.75) / 2.0);
    assert_eq!((get("A").coverage, get("A").top1_wins), (2, 0));
    assert!(agg.summary.iter().all(|s| s.model != "C"));
    assert_eq!(agg.summary[0].model, "B");
}

#[test]
fn missing_cells_are_excluded_with_flag() {
    let rankings = vec![MetricRanking {
        metric: "m".into(),
        entries: vec![
            RankEntry {
                model: "A".into(),
                loss: "L".into(),
                avg_rank: Some(1.0),
            },
            RankEntry {
                model: "B".into(),
                loss: "L".into(),
                avg_rank: None,
            },
        ],
    }];
    let agg = aggregate_ranks(&rankings, 3).unwrap();
    assert_eq!(agg.summary.len(), 1);
    assert_eq!(agg.flags.len(), 1);
    assert!(aggregate_ranks(&[], 3).is_err());
    assert!(aggregate_ranks(&rankings, 0).is_err());
}

fn random_table(scores: &[Vec<f64>]) -> MetricTable {
    // scores[row][metric] for rows on one dataset
    let metrics = [
        Metric::NodeClsF1,
        Metric::ReconstructionBce,
        Metric::RankMe,
        Metric::Coherence,
    ];
    MetricTable {
        rows: scores
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let vals: Vec<(Metric, f64)> =
                    metrics.iter().copied().zip(s.iter().copied()).collect();
                row(&format!("M{i:02}"), "L", "D", 1, &vals)
            })
            .collect(),
    }
}

proptest! {
    #[test]
    fn ranks_ignore_monotone_rescaling(
        scores in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..12),
        a in 0.01f64..50.0,
        b in -10.0f64..10.0,
    ) {
        let base = aggregate_ranks(&rank_metric_table(&random_table(&scores)), 3).unwrap();
        let warped: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|x| a * x.exp() + b).collect()).collect();
        let other = aggregate_ranks(&rank_metric_table(&random_table(&warped)), 3).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn summary_invariants_hold(scores in prop::collection::vec(prop::collection::vec(0i32..4, 4), 1..10)) {
        let scores: Vec<Vec<f64>> = scores.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let r = rank_metric_table(&random_table(&scores));
        let agg = aggregate_ranks(&r, 3).unwrap();
        for s in &agg.summary {
            prop_assert!(s.coverage >= s.top1_wins);
            prop_assert!(s.coverage <= METRIC_COUNT);
            prop_assert!(s.avg_rank >= 1.0);
        }
    }

    #[test]
    fn unique_best_has_rank_one_and_single_win(scores in prop::collection::hash_set(-1000i64..1000, 2..15)) {
        let scores: Vec<Vec<f64>> = scores.iter().map(|&x| vec![x as f64; 4]).collect();
        let table = random_table(&scores);
        let r: Vec<MetricRanking> = rank_metric_table(&table).into_iter().filter(|m| m.metric == Metric::NodeClsF1.id()).collect();
        let agg = aggregate_ranks(&r, 3).unwrap();
        prop_assert_eq!(agg.summary[0].avg_rank, 1.0);
        prop_assert_eq!(agg.summary.iter().map(|s| s.top1_wins).sum::<usize>(), 1);
    }
}

fn fixture_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/rank")
}

fn fixture_summary(setting: &str) -> Vec<RankSummary> {
    let r = load_rank_tables(fixture_dir().join(setting)).unwrap();
    assert_eq!(r.len(), METRIC_COUNT);
    aggregate_ranks(&r, 3).unwrap().summary
}

fn find<'a>(s: &'a [RankSummary], model: &str, loss: &str) -> &'a RankSummary {
    s.iter()
        .find(|r| r.model == model && r.loss == loss)
        .unwrap_or_else(|| panic!("{model} {loss}"))
}

#[test]
fn transductive_fixture_headline_rows() {
    let s = fixture_summary("transductive");
    let r = find(&s, "GCN", "CrossE_L");
    assert_eq!(
        (
            round_half_even(r.avg_rank, 2).as_str(),
            r.coverage,
            r.top1_wins
        ),
        ("1.00", 1, 1)
    );
    let r = find(&s, "GAT", "Triplet_L");
    assert_eq!(
        (
            round_half_even(r.avg_rank, 2).as_str(),
            r.coverage,
            r.top1_wins
        ),
        ("6.97", 14, 9)
    );
}

#[test]
fn inductive_fixture_headline_row() {
    let s = fixture_summary("inductive");
    let r = find(&s, "GIN", "CrossE_L");
    assert_eq!(
        (
            round_half_even(r.avg_rank, 2).as_str(),
            r.coverage,
            r.top1_wins
        ),
        ("4.95", 2, 2)
    );
}

#[test]
fn rank_tables_round_trip() {
    let r = load_rank_tables(fixture_dir().join("transductive")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut f = std::fs::File::create(dir.path().join("all.csv")).unwrap();
    write_rank_tables(&r, &mut f).unwrap();
    drop(f);
    assert_eq!(load_rank_tables(dir.path()).unwrap(), r);
}

// ---- report ----

#[test]
fn display_rounding_is_half_even_on_exact_values() {
    assert_eq!(round_half_even(4.954999, 2), "4.95");
    assert_eq!(round_half_even(0.125, 2), "0.12");
    assert_eq!(round_half_even(0.375, 2), "0.38");
    assert_eq!(round_half_even(2.5, 0), "2");
    assert_eq!(round_half_even(3.5, 0), "4");
    // 2.675 is stored just below the tie
    assert_eq!(round_half_even(2.675, 2), "2.67");
    assert_eq!(round_half_even(9.999, 2), "10.00");
    assert_eq!(round_half_even(-0.001, 2), "0.00");
    assert_eq!(round_half_even(-1.005, 2), "-1.00");
    assert_eq!(round_half_even(f64::INFINITY, 2), "inf");
}

proptest! {
    #[test]
    fn rounding_agrees_with_std_off_ties(x in -1e6f64..1e6) {
        // std formatting rounds the exact binary value too, ties to even
        prop_assert_eq!(round_half_even(x, 2), format!("{x:.2}").replace("-0.00", "0.00"));
    }
}

#[test]
fn metric_table_csv_round_trips() {
    let mut t = MetricTable {
        rows: vec![
            row(
                "GCN",
                "PMI_L",
                "Cora",
                1,
                &[
                    (Metric::NodeClsAccuracy, 0.1 + 0.2),
                    (Metric::RankMe, 1e-300),
                ],
            ),
            row(
                "GAT",
                "Contr_l + PR_L",
                "Cora ↓ Citeseer",
                2,
                &[(Metric::CalinskiHarabasz, f64::INFINITY)],
            ),
        ],
    };
    t.rows[1].1.flag("calinski_harabasz", "inf");
    let text = t.to_csv_string();
    let back = MetricTable::read_csv(text.as_bytes()).unwrap();
    assert_eq!(back, t);
    assert_eq!(back.to_csv_string(), text);
    assert!(MetricTable::read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn summary_csv_round_trips() {
    let s = vec![
        RankSummary {
            model: "GIN".into(),
            loss: "CrossE_L".into(),
            avg_rank: 4.95 + 1e-13,
            coverage: 2,
            top1_wins: 2,
        },
        RankSummary {
            model: "GCN".into(),
            loss: "Contr_l + PMI_L".into(),
            avg_rank: 5.2,
            coverage: 1,
            top1_wins: 1,
        },
    ];
    let mut buf = Vec::new();
    write_summary(&s, &mut buf).unwrap();
    assert!(buf.starts_with(b"model,loss,avg_rank,coverage,top1_wins\n"));
    assert_eq!(read_summary(buf.as_slice()).unwrap(), s);
    let mut empty = Vec::new();
    write_summary(&[], &mut empty).unwrap();
    assert_eq!(empty, b"model,loss,avg_rank,coverage,top1_wins\n");
}

#[test]
fn markdown_report_layout() {
    let s = vec![RankSummary {
        model: "GCN".into(),
        loss: "CrossE_L".into(),
        avg_rank: 1.0,
        coverage: 1,
        top1_wins: 1,
    }];
    let dir = tempfile::tempdir().unwrap();
    let t = MetricTable {
        rows: vec![row(
            "GCN",
            "CrossE_L",
            "Cora",
            1,
            &[(Metric::NodeClsAccuracy, 81.234)],
        )],
    };
    let cfg = ExperimentConfig::default();
    let files = emit_report(
        dir.path(),
        &s,
        Some(&t),
        Some(&cfg),
        &["note".into()],
        ReportFormat::Markdown,
    )
    .unwrap();
    assert_eq!(files.len(), 2);
    let md = std::fs::read_to_string(&files[0]).unwrap();
    assert!(md.contains("| Model | Loss | AvgRank | Coverage | Top1Wins |"));
    assert!(md.contains("| GCN | CrossE_L | 1.00 | 1 | 1 |"));
    assert!(md.contains("epochs = 500"));
    assert!(md.contains("patience = 10"));
    let metrics = std::fs::read_to_string(&files[1]).unwrap();
    assert!(metrics.contains("81.23 ± 0.00"));
    assert!(metrics.contains("graph_reconstruction_bce_loss (↓)"));
    assert!(metrics.contains("n/a"));

    let files = emit_report(dir.path(), &s, Some(&t), Some(&cfg), &[], ReportFormat::Csv).unwrap();
    assert_eq!(files.len(), 3);
    assert_eq!(
        read_summary(std::fs::File::open(&files[0]).unwrap()).unwrap(),
        s
    );
    assert_eq!(MetricTable::load(&files[1]).unwrap(), t);
    let cfg_back = ExperimentConfig::load(&files[2]).unwrap();
    assert_eq!(cfg_back, cfg);
}

#[test]
fn unwritable_report_path_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    assert!(emit_report(&blocker, &[], None, None, &[], ReportFormat::Csv).is_err());
    assert!("pdf".parse::<ReportFormat>().is_err());
    assert_eq!(
        "Markdown".parse::<ReportFormat>().unwrap(),
        ReportFormat::Markdown
    );
}

// ---- config ----

#[test]
fn defaults_follow_the_protocol() {
    let c = ExperimentConfig::default();
    assert_eq!((c.epochs, c.patience, c.embed_dim), (500, 10, 128));
    assert_eq!(c.seeds, vec![1, 2, 3, 4, 5]);
    assert_eq!(c.architectures.len(), 7);
    assert_eq!(c.loss_specs().unwrap().len(), 31);
    assert_eq!(c.min_delta, 1e-6);
    assert_eq!(
        (c.lr, c.beta1, c.beta2, c.adam_eps),
        (1e-3, 0.9, 0.999, 1e-8)
    );
    c.validate().unwrap();
}

#[test]
fn config_parses_json_and_toml() {
    let j = r#"{"setting":"inductive","pairs":[{"pretrain":"Cora","apply":"Citeseer"}],
               "architectures":["GIN","GCN"],"losses":["CrossE_L","Contr_l + PMI_L"],"seeds":[3],"epochs":100}"#;
    let c = ExperimentConfig::from_json(j).unwrap();
    assert_eq!(c.setting, Setting::Inductive);
    assert_eq!(c.architectures, vec![Architecture::Gin, Architecture::Gcn]);
    assert_eq!(
        c.losses[1].members(),
        &[BaseLoss::Contrastive, BaseLoss::Pmi]
    );
    assert_eq!(c.epochs, 100);
    assert_eq!(c.patience, 10);
    let t = c.to_toml();
    assert_eq!(ExperimentConfig::from_toml(&t).unwrap(), c);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.toml");
    std::fs::write(&p, "datasets = [\"toy\"]\nmax_order = 2\n").unwrap();
    let c = ExperimentConfig::load(&p).unwrap();
    assert_eq!(c.loss_specs().unwrap().len(), 15);
    let p = dir.path().join("c.yaml");
    std::fs::write(&p, "").unwrap();
    assert!(ExperimentConfig::load(&p).is_err());
}

#[test]
fn invalid_configs_rejected() {
    assert!(ExperimentConfig::from_json(r#"{"epochs":0}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"patience":0}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"embed_dim":64}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"embed_dim":64,"fixed_embed_dim":false}"#).is_ok());
    assert!(ExperimentConfig::from_json(r#"{"epoch":10}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"losses":["MSE_L"]}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"max_order":6}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"setting":"inductive"}"#).is_err());
    assert!(ExperimentConfig::from_json(
        r#"{"setting":"inductive","pairs":[{"pretrain":"Cora","apply":"cora"}]}"#
    )
    .is_err());
}
