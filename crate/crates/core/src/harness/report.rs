//! CSV and Markdown reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::matrix::MetricTable;
use super::rank::{write_summary, RankSummary};
use crate::error::{Error, Result};
use crate::metrics::{format_value, Metric};

/// Decimal text of `x` rounded to `places` digits, ties to even. Rounding
/// works on the exact binary value, so 4.954999 gives "4.95".
pub fn round_half_even(x: f64, places: usize) -> String {
    if !x.is_finite() {
        return format_value(Some(x));
    }
    // 40 extra digits capture every f64 exactly enough to detect ties
    let exact = format!("{:.*}", places + 40, x.abs());
    let (int, frac) = exact.split_once('.').expect("fixed-point output");
    let mut digits: Vec<u8> = int
        .bytes()
        .chain(frac.bytes().take(places))
        .map(|b| b - b'0')
        .collect();
    let rest = &frac[places..];
    let first = rest.as_bytes()[0] - b'0';
    let beyond = rest[1..].bytes().any(|b| b != b'0');
    let last_odd = digits.last().is_some_and(|d| d % 2 == 1);
    if first > 5 || (first == 5 && (beyond || last_odd)) {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - places;
    let mut s = String::new();
    let zero = digits.iter().all(|&d| d == 0);
    if x.is_sign_negative() && !zero {
        s.push('-');
    }
    s.extend(digits[..split].iter().map(|d| char::from(b'0' + d)));
    if places > 0 {
        s.push('.');
        s.extend(digits[split..].iter().map(|d| char::from(b'0' + d)));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::invalid(format!("unknown report format {s:?}"))),
        }
    }
}

fn header_lines(config: Option<&ExperimentConfig>, flags: &[String]) -> String {
    let mut s = String::new();
    if let Some(cfg) = config {
        s.push_str("Configuration:\n\n```toml\n");
        s.push_str(&cfg.to_toml());
        s.push_str("```\n\n");
    }
    if !flags.is_empty() {
        s.push_str("Notes:\n\n");
        for f in flags {
            let _ = writeln!(s, "- {f}");
        }
        s.push('\n');
    }
    s
}

pub fn summary_markdown(title: &str, summary: &[RankSummary]) -> String {
    let mut s = format!(
        "## {title}\n\n| Model | Loss | AvgRank | Coverage | Top1Wins |\n|---|---|---|---|---|\n"
    );
    for r in summary {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.model,
            r.loss,
            round_half_even(r.avg_rank, 2),
            r.coverage,
            r.top1_wins
        );
    }
    s
}

/// One Markdown table per metric: mean ± std over seeds for every
/// (model, loss) row and dataset column.
pub fn metric_tables_markdown(table: &MetricTable) -> String {
    let mut datasets: Vec<String> = table.rows.iter().map(|r| r.0.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut groups: BTreeMap<(String, String, String), Vec<&crate::metrics::MetricVector>> =
        BTreeMap::new();
    for (k, v) in &table.rows {
        groups
            .entry((k.model.clone(), k.loss.clone(), k.dataset.clone()))
            .or_default()
            .push(v);
    }
    let mut pairs: Vec<(String, String)> =
        groups.keys().map(|k| (k.0.clone(), k.1.clone())).collect();
    pairs.dedup();
    let mut s = String::new();
    for m in Metric::ALL {
        let arrow = if m.higher_is_better() { "↑" } else { "↓" };
        let _ = write!(s, "## {} ({arrow})\n\n| Model | Loss |", m.id());
        for d in &datasets {
            let _ = write!(s, " {d} |");
        }
        s.push_str("\n|---|---|");
        s.push_str(&"---|".repeat(datasets.len()));
        s.push('\n');
        for (model, loss) in &pairs {
            let _ = write!(s, "| {model} | {loss} |");
            for d in &datasets {
                let cell = groups
                    .get(&(model.clone(), loss.clone(), d.clone()))
                    .map(|runs| {
                        let xs: Vec<f64> = runs.iter().filter_map(|v| v.get(m)).collect();
                        if xs.is_empty() {
                            return "n/a".to_string();
                        }
                        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
                        let var = if mean.is_finite() {
                            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64
                        } else {
                            0.0
                        };
                        format!(
                            "{} ± {}",
                            round_half_even(mean, 2),
                            round_half_even(var.sqrt(), 2)
                        )
                    })
                    .unwrap_or_else(|| "n/a".to_string());
                let _ = write!(s, " {cell} |");
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the rank summary and, when given, the metric table into `dir`.
/// CSV keeps full precision; Markdown rounds to two decimals. Returns the
/// written paths.
pub fn emit_report(
    dir: impl AsRef<Path>,
    summary: &[RankSummary],
    table: Option<&MetricTable>,
    config: Option<&ExperimentConfig>,
    flags: &[String],
    format: ReportFormat,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            let p = dir.join("rank_summary.csv");
            let mut buf = Vec::new();
            write_summary(summary, &mut buf)?;
            write_file(&p, &buf)?;
            written.push(p);
            if let Some(t) = table {
                let p = dir.join("metrics.csv");
                t.save(&p)?;
                written.push(p);
            }
            if let Some(cfg) = config {
                let p = dir.join("config.toml");
                write_file(&p, cfg.to_toml().as_bytes())?;
                written.push(p);
            }
        }
        ReportFormat::Markdown => {
            let mut s = String::from("# Loss benchmark report\n\n");
            s.push_str(&header_lines(config, flags));
            s.push_str(&summary_markdown("Summary", summary));
            let p = dir.join("summary.md");
            write_file(&p, s.as_bytes())?;
            written.push(p);
            if let Some(t) = table {
                let p = dir.join("metrics.md");
                write_file(&p, metric_tables_markdown(t).as_bytes())?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
