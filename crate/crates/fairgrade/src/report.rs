//! Metric tables and their file formats.
//!
//! The main table has one row per (metric, strategy) and one column per group,
//! then `Overall`, `Range` and `STD`, all in percent. Overall pools every
//! group's outcomes, so it is weighted by support.

use std::fs;
use std::path::Path;

use fairgrade_core::fairmetrics::{
    binarize, fairness_criteria, group_report, BinarizeOptions, FairnessCriteria, Flag, GroupReport, Metric,
};
use fairgrade_core::trainer::{EpochRecord, PredictionSet, StrategyId};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary of one trained strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub strategy: String,
    pub report: GroupReport,
    pub criteria: Option<FairnessCriteria>,
}

/// Summarizes one prediction set. `included` marks the groups entering
/// range / STD.
pub fn summarize(
    strategy: &StrategyId,
    predictions: &PredictionSet,
    options: BinarizeOptions,
    included: &[bool],
) -> Result<StrategyResult> {
    let outcomes = binarize(predictions, options);
    let mut report = group_report(&outcomes, &predictions.group_list, included)?;
    if let StrategyId::Alone(group) = strategy {
        for g in &predictions.group_list {
            if g != group {
                report.flags.push(Flag {
                    group: g.clone(),
                    reason: format!("out of distribution: model trained on {group} only"),
                });
            }
        }
    }
    let criteria = fairness_criteria(&outcomes).ok();
    Ok(StrategyResult {
        strategy: strategy.to_string(),
        report,
        criteria,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub metric: Metric,
    pub strategy: String,
    /// Percent per group, in group-list order; `None` where undefined.
    pub groups: Vec<Option<f64>>,
    pub overall: Option<f64>,
    pub range: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub group_list: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn pct(x: Option<f64>) -> Option<f64> {
    x.map(|v| 100.0 * v)
}

pub fn table(results: &[StrategyResult]) -> Table {
    let group_list = results
        .first()
        .map(|r| r.report.groups.iter().map(|g| g.group.clone()).collect())
        .unwrap_or_default();
    let mut rows = Vec::new();
    for metric in Metric::REPORTED {
        for r in results {
            let spread = r.report.spread(metric);
            rows.push(TableRow {
                metric,
                strategy: r.strategy.clone(),
                groups: r.report.groups.iter().map(|g| pct(g.rate(metric))).collect(),
                overall: pct(r.report.overall.rate(metric)),
                range: pct(spread.range),
                std: pct(spread.std),
            });
        }
    }
    Table { group_list, rows }
}

/// Each row minus the `default` row of the same metric. Empty without a
/// `default` result.
pub fn delta_table(t: &Table) -> Table {
    let sub = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
    let rows = t
        .rows
        .iter()
        .filter(|r| r.strategy != "default")
        .filter_map(|r| {
            let base = t.rows.iter().find(|b| b.metric == r.metric && b.strategy == "default")?;
            Some(TableRow {
                metric: r.metric,
                strategy: r.strategy.clone(),
                groups: r.groups.iter().zip(&base.groups).map(|(a, b)| sub(*a, *b)).collect(),
                overall: sub(r.overall, base.overall),
                range: sub(r.range, base.range),
                std: sub(r.std, base.std),
            })
        })
        .collect();
    Table {
        group_list: t.group_list.clone(),
        rows,
    }
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| format!("{v:.2}"))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    }
}

pub fn write_table_csv(path: &Path, t: &Table) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["metric".to_string(), "strategy".to_string()];
    header.extend(t.group_list.iter().cloned());
    header.extend(["Overall", "Range", "STD"].map(String::from));
    w.write_record(&header).map_err(csv_err(path))?;
    for r in &t.rows {
        let mut rec = vec![r.metric.label().to_string(), r.strategy.clone()];
        rec.extend(r.groups.iter().map(|x| cell(*x)));
        rec.extend([cell(r.overall), cell(r.range), cell(r.std)]);
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: `strategy,group,metric,value` with values as fractions.
pub fn write_tidy_csv(path: &Path, results: &[StrategyResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["strategy", "group", "metric", "value"]).map_err(csv_err(path))?;
    for r in results {
        for row in r.report.groups.iter().chain(std::iter::once(&r.report.overall)) {
            for m in Metric::ALL {
                if let Some(v) = row.rate(m) {
                    w.write_record([r.strategy.as_str(), &row.group, m.label(), &v.to_string()])
                        .map_err(csv_err(path))?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"]).map_err(csv_err(path))?;
    for h in history {
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), h.val_loss.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Plain-text rendering of a table for the terminal.
pub fn render(t: &Table) -> String {
    let mut out = format!("{:<9} {:<28}", "metric", "strategy");
    for g in t.group_list.iter().map(String::as_str).chain(["Overall", "Range", "STD"]) {
        let short: String = g.chars().take(8).collect();
        out.push_str(&format!(" {short:>8}"));
    }
    out.push('\n');
    for r in &t.rows {
        out.push_str(&format!("{:<9} {:<28}", r.metric.label(), r.strategy));
        for v in r.groups.iter().chain([&r.overall, &r.range, &r.std]) {
            out.push_str(&format!(" {:>8}", cell(*v)));
        }
        out.push('\n');
    }
    out
}

/// Writes `table.csv`, `table.json`, `delta.csv`, `tidy.csv` and
/// `criteria.json` into `dir`.
pub fn write_all(dir: &Path, results: &[StrategyResult]) -> Result<Table> {
    let t = table(results);
    write_table_csv(&dir.join("table.csv"), &t)?;
    write_json(&dir.join("table.json"), &t)?;
    write_table_csv(&dir.join("delta.csv"), &delta_table(&t))?;
    write_tidy_csv(&dir.join("tidy.csv"), results)?;
    write_json(&dir.join("criteria.json"), results)?;
    Ok(t)
}
