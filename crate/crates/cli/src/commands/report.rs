use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use cdiff_core::hashing::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub source: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
}

fn files_named(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            files_named(&path, name, out)?;
        } else if e.file_name() == name {
            out.push(path);
        }
    }
    Ok(())
}

fn rel(run: &Path, path: &Path) -> String {
    let parent = path.parent().unwrap_or(path);
    parent.strip_prefix(run).unwrap_or(parent).display().to_string()
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim().parse().with_context(|| format!("bad number `{s}` in {}", path.display()))
}

/// `metric<TAB>mean<TAB>n` rows from an evaluation report.
fn metrics_rows(run: &Path, path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let source = rel(run, path);
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 3 {
                bail!("malformed line in {}", path.display());
            }
            Ok(ReportRow { source: source.clone(), metric: f[0].into(), value: parse_f64(f[1], path)?, n: f[2].parse()? })
        })
        .collect()
}

/// Best validation recall and its epoch from a training history.
fn history_rows(run: &Path, path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    let metric = header.get(2).copied().unwrap_or("val_recall").to_string();
    let mut best: Option<(usize, f64)> = None;
    let mut epochs = 0;
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.len() < 3 {
            bail!("malformed line in {}", path.display());
        }
        epochs += 1;
        let v = parse_f64(f[2], path)?;
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((f[0].parse()?, v));
        }
    }
    let source = rel(run, path);
    Ok(match best {
        Some((epoch, v)) => vec![
            ReportRow { source: source.clone(), metric: format!("best_{metric}"), value: v, n: epochs },
            ReportRow { source, metric: "best_epoch".into(), value: epoch as f64, n: epochs },
        ],
        None => Vec::new(),
    })
}

/// Every numeric metric column of every sweep cell that ran.
fn sweep_rows(run: &Path, path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
    let dir = rel(run, path);
    let mut rows = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split('\t').collect();
        if f.get(7) != Some(&"ok") {
            continue;
        }
        let source = format!("{dir}/cell-{}{}({})", f[0], if f.last() == Some(&"*") { "*" } else { "" }, f[1]);
        for (name, v) in header.iter().zip(&f).filter(|(h, _)| h.starts_with("val_") || h.starts_with("test_")) {
            rows.push(ReportRow { source: source.clone(), metric: name.to_string(), value: parse_f64(v, path)?, n: 1 });
        }
    }
    Ok(rows)
}

/// Mean over every `train/seed-*/eval` report, one row per metric.
fn seed_means(rows: &[ReportRow]) -> Vec<ReportRow> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.source.starts_with("train/seed-") && r.source.ends_with("/eval")) {
        let e = acc.entry(&r.metric).or_default();
        e.0 += r.value;
        e.1 += 1;
    }
    acc.into_iter()
        .filter(|(_, (_, n))| *n > 1)
        .map(|(m, (s, n))| ReportRow { source: "train/seed-mean".into(), metric: m.into(), value: s / n as f64, n })
        .collect()
}

pub fn collect(run: &Path) -> Result<Vec<ReportRow>> {
    if !run.is_dir() {
        bail!("run directory {} does not exist", run.display());
    }
    let mut rows = Vec::new();
    let mut found = Vec::new();
    files_named(run, "history.tsv", &mut found)?;
    for p in found.drain(..) {
        rows.extend(history_rows(run, &p)?);
    }
    files_named(run, "metrics.tsv", &mut found)?;
    for p in found.drain(..) {
        rows.extend(metrics_rows(run, &p)?);
    }
    rows.extend(seed_means(&rows));
    files_named(run, "results.tsv", &mut found)?;
    for p in found.drain(..) {
        rows.extend(sweep_rows(run, &p)?);
    }
    Ok(rows)
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("source,metric,value,n\n");
    for r in rows {
        let _ = writeln!(out, "\"{}\",{},{:.6},{}", r.source.replace('"', "\"\""), r.metric, r.value, r.n);
    }
    out
}

pub fn to_text(rows: &[ReportRow]) -> String {
    let w = rows.iter().map(|r| r.source.len()).max().unwrap_or(6).max(6);
    let m = rows.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<w$}  {:<m$}  {:>10}  {:>6}\n", "source", "metric", "value", "n");
    for r in rows {
        let _ = writeln!(out, "{:<w$}  {:<m$}  {:>10.6}  {:>6}", r.source, r.metric, r.value, r.n);
    }
    out
}

/// `report` subcommand: gathers histories, evaluation reports and sweep
/// tables under `run`, writes `report.csv` there and returns the text table.
pub fn run(run: &Path) -> Result<String> {
    let rows = collect(run)?;
    if rows.is_empty() {
        bail!("no results found under {}", run.display());
    }
    write_atomic(&run.join("report.csv"), to_csv(&rows).as_bytes())?;
    Ok(to_text(&rows))
}
