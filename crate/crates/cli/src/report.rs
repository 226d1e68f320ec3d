//! Aggregates finished runs into one seed-averaged report.

use crate::error::CliError;
use crate::table::{write_json, Table};
use kmfg::analysis::aggregate_trials;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use walkdir::WalkDir;

pub const REPORT_SCHEMA: &str = "kernel-mfg/report-v1";

#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub experiment: String,
    /// `key=value` pairs joined by `;`.
    pub group: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub sem: f64,
    pub count: usize,
    /// `"single-seed"` when only one value reached the group.
    pub flag: String,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    schema: &'static str,
    runs: Vec<String>,
    rows: &'a [ReportRow],
}

struct Run {
    dir: PathBuf,
    experiment: String,
    keys: Vec<String>,
    results: PathBuf,
}

fn read_summary(path: &Path) -> Result<Option<Run>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    if v.get("schema").and_then(Value::as_str) != Some(crate::commands::SUMMARY_SCHEMA) {
        return Ok(None);
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let experiment = v["experiment"].as_str().unwrap_or_default().to_string();
    let keys = v["key_columns"]
        .as_array()
        .map(|a| a.iter().filter_map(|k| k.as_str().map(String::from)).collect())
        .unwrap_or_default();
    let results = dir.join(v["results"].as_str().unwrap_or("results.csv"));
    Ok(Some(Run { dir, experiment, keys, results }))
}

/// Scans `root` for run summaries and writes `report.json` and `report.csv` into it.
pub fn report(root: &Path) -> Result<Vec<ReportRow>, CliError> {
    if !root.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", root.display())));
    }
    let mut runs = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(CliError::io)?;
        if entry.file_type().is_file() && entry.file_name() == "summary.json" {
            if let Some(run) = read_summary(entry.path())? {
                runs.push(run);
            }
        }
    }
    if runs.is_empty() {
        return Err(CliError::config(format!("no run summaries found under {}", root.display())));
    }

    // (experiment, group) -> metric -> values, in first-seen order per group.
    let mut groups: BTreeMap<(String, String), Vec<(String, Vec<f64>)>> = BTreeMap::new();
    for run in &runs {
        let mut rdr = csv::Reader::from_path(&run.results).map_err(|e| CliError::io(format!("{}: {e}", run.results.display())))?;
        let header: Vec<String> = rdr.headers().map_err(CliError::io)?.iter().map(String::from).collect();
        let key_idx: Vec<usize> = run.keys.iter().filter_map(|k| header.iter().position(|h| h == k)).collect();
        for rec in rdr.records() {
            let rec = rec.map_err(CliError::io)?;
            let group = key_idx.iter().map(|&i| format!("{}={}", header[i], &rec[i])).collect::<Vec<_>>().join(";");
            let metrics = groups.entry((run.experiment.clone(), group)).or_default();
            for (i, name) in header.iter().enumerate() {
                if name == "seed" || key_idx.contains(&i) {
                    continue;
                }
                let Ok(x) = rec[i].parse::<f64>() else { continue };
                match metrics.iter_mut().find(|(m, _)| m == name) {
                    Some((_, vals)) => vals.push(x),
                    None => metrics.push((name.clone(), vec![x])),
                }
            }
        }
    }

    let mut rows = Vec::new();
    for ((experiment, group), metrics) in groups {
        for (metric, vals) in metrics {
            let (std, sem, flag) = if vals.len() < 2 {
                (0.0, 0.0, "single-seed")
            } else {
                let s = aggregate_trials(&vals)?;
                (s.std, s.sem, "")
            };
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            rows.push(ReportRow {
                experiment: experiment.clone(),
                group: group.clone(),
                metric,
                mean,
                std,
                sem,
                count: vals.len(),
                flag: flag.into(),
            });
        }
    }

    let mut t = Table::new(&["experiment", "group", "metric", "mean", "std", "sem", "count", "flag"], &[]);
    for r in &rows {
        t.push(vec![
            r.experiment.clone().into(),
            r.group.clone().into(),
            r.metric.clone().into(),
            r.mean.into(),
            r.std.into(),
            r.sem.into(),
            r.count.into(),
            r.flag.clone().into(),
        ]);
    }
    t.write_csv(&root.join("report.csv"))?;
    let run_dirs = runs.iter().map(|r| r.dir.strip_prefix(root).unwrap_or(&r.dir).display().to_string()).collect();
    write_json(&root.join("report.json"), &Report { schema: REPORT_SCHEMA, runs: run_dirs, rows: &rows })?;
    Ok(rows)
}
