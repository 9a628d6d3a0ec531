use std::path::Path;
use std::process::{Command, Output};

fn lossbench(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_lossbench"));
    c.args(args);
    for (k, v) in envs {
        c.env(k, v);
    }
    let out = c.output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fixtures() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/rank/transductive")
        .display()
        .to_string()
}

#[test]
fn rank_prints_summary_csv() {
    let out = lossbench(&["rank", "--tables", &fixtures(), "--top-k", "3"], &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("model,loss,avg_rank,coverage,top1_wins"));
    assert_eq!(lines.next(), Some("GCN,CrossE_L,1,1,1"));
    assert!(text.contains("GAT,Triplet_L,6.9"));
}

#[test]
fn ingest_exports_tsv_that_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().display().to_string();
    let out = lossbench(&["ingest", "toy", "--out", &d], &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("nodes\t40\n"));
    let nodes = dir.path().join("toy.nodes.tsv").display().to_string();
    let edges = dir.path().join("toy.edges.tsv").display().to_string();
    let again = lossbench(&["ingest", &format!("{nodes}:{edges}")], &[]);
    let again = String::from_utf8(again.stdout).unwrap();
    let shape = |t: &str| {
        t.lines()
            .filter(|l| {
                !l.starts_with("name") && !l.starts_with("source") && !l.starts_with("directed")
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(shape(&text), shape(&again));
}

#[test]
fn train_then_eval_across_datasets() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("gin.ckpt").display().to_string();
    let out = lossbench(
        &[
            "train",
            "--arch",
            "GIN",
            "--loss",
            "CrossE_L + PMI_L",
            "--dataset",
            "toy",
            "--epochs",
            "5",
            "--out",
            &ckpt,
        ],
        &[],
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("epochs_run\t5"));
    assert!(text.contains("gate.PMI_L\t"));
    let out = lossbench(&["eval", "--ckpt", &ckpt, "--dataset", "toy-b"], &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("GIN,,ToyB,eval,1,"));
    assert_eq!(rows[1].split(',').count(), 27);
}

#[test]
fn matrix_uses_cache_dir_from_env_then_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.json");
    std::fs::write(
        &cfg,
        r#"{"datasets":["toy"],"architectures":["GCN"],"losses":["PMI_L","PR_L"],"seeds":[1],"epochs":3,"probe_epochs":10,"probe_repeats":1}"#,
    )
    .unwrap();
    let cache = dir.path().join("cache");
    let metrics = dir.path().join("metrics.csv");
    let args = [
        "matrix",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
    ];
    let first = lossbench(&args, &[("LOSSBENCH_CACHE_DIR", &cache)]);
    assert!(String::from_utf8_lossy(&first.stderr).contains("2 computed, 0 cached"));
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
    let second = lossbench(&args, &[("LOSSBENCH_CACHE_DIR", &cache)]);
    assert!(String::from_utf8_lossy(&second.stderr).contains("0 computed, 2 cached"));

    let report = dir.path().join("report");
    lossbench(
        &[
            "report",
            "--format",
            "markdown",
            "--metrics",
            metrics.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ],
        &[],
    );
    let md = std::fs::read_to_string(report.join("summary.md")).unwrap();
    assert!(md.contains("| Model | Loss | AvgRank | Coverage | Top1Wins |"));
    assert!(md.contains("probe_epochs = 10"));
    assert!(report.join("metrics.md").is_file());

    lossbench(
        &[
            "report",
            "--format",
            "csv",
            "--metrics",
            metrics.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ],
        &[],
    );
    let csv = std::fs::read_to_string(report.join("rank_summary.csv")).unwrap();
    assert!(csv.starts_with("model,loss,avg_rank,coverage,top1_wins\n"));
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_lossbench"))
        .args([
            "train",
            "--arch",
            "GIN",
            "--loss",
            "MSE_L",
            "--dataset",
            "toy",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_lossbench"))
        .args(["ingest", "nowhere"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}
