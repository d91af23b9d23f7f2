use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::run::{Curve, RunRecord};
use super::{ExpError, Result};
use crate::metrics::MetricsReport;
use crate::trainsup::GridReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Aligned plain-text tables.
    Text,
    Csv,
    Json,
    /// Loss-curve plot.
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 4] = [
        ReportFormat::Text,
        ReportFormat::Csv,
        ReportFormat::Json,
        ReportFormat::Svg,
    ];
}

impl FromStr for ReportFormat {
    type Err = ExpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" | "txt" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(ExpError::config(format!(
                "unknown report format {other:?} (text, csv, json, svg)"
            ))),
        }
    }
}

const METRIC_NAMES: [&str; 8] = [
    "auc",
    "accuracy",
    "sensitivity",
    "specificity",
    "precision",
    "f1",
    "emd_generated",
    "emd_reconstructed",
];

/// Printed value of one metric: the stored number verbatim, `undefined`
/// for computed-but-undefined metrics, empty when not produced.
fn metric_cell(report: &MetricsReport, name: &str) -> String {
    let value = report
        .named_values()
        .into_iter()
        .find(|(n, _)| *n == name)
        .and_then(|(_, v)| v);
    match value {
        Some(v) => format!("{v}"),
        None if report.undefined.iter().any(|u| u == name) => "undefined".into(),
        None => String::new(),
    }
}

fn metric_rows(record: &RunRecord) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["report".to_string(), "dataset".into(), "model".into()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    let rows = record
        .reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.name.clone(),
                r.report.dataset.clone(),
                r.report.model.clone(),
            ];
            row.extend(METRIC_NAMES.iter().map(|m| metric_cell(&r.report, m)));
            row
        })
        .collect();
    (header, rows)
}

fn grid_rows(grid: &GridReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["model".to_string(), "learning_rate".into()];
    header.extend(grid.epoch_budgets.iter().map(|e| e.to_string()));
    let mut rows = Vec::new();
    for (s, model) in grid.models.iter().enumerate() {
        for (l, lr) in grid.learning_rates.iter().enumerate() {
            let mut row = vec![model.clone(), format!("{lr}")];
            row.extend(
                (0..grid.epoch_budgets.len())
                    .map(|b| format!("{}", grid.cell(s, l, b).val_accuracy)),
            );
            rows.push(row);
        }
    }
    (header, rows)
}

/// Columns padded to their widest cell; numbers right-aligned.
pub fn aligned_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(cell, &w)| {
                if cell.parse::<f64>().is_ok() {
                    format!("{cell:>w$}")
                } else {
                    format!("{cell:<w$}")
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(
        &widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn csv_table(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let internal = |e: csv::Error| ExpError::internal(e.to_string());
    w.write_record(header).map_err(internal)?;
    for r in rows {
        w.write_record(r).map_err(internal)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| ExpError::internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| ExpError::internal(e.to_string()))
}

/// One row per epoch (1-based), one column per curve; shorter curves leave
/// trailing cells empty.
pub fn curves_csv(curves: &[Curve]) -> Result<String> {
    let mut header = vec!["epoch".to_string()];
    header.extend(curves.iter().map(|c| c.name.clone()));
    let epochs = curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
    let rows: Vec<Vec<String>> = (0..epochs)
        .map(|e| {
            let mut row = vec![(e + 1).to_string()];
            row.extend(
                curves
                    .iter()
                    .map(|c| c.values.get(e).map(|v| format!("{v}")).unwrap_or_default()),
            );
            row
        })
        .collect();
    csv_table(&header, &rows)
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

/// Line plot of every curve against epoch.
pub fn curves_svg(title: &str, curves: &[Curve]) -> String {
    let (w, h) = (720.0, 420.0);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let finite = || {
        curves
            .iter()
            .flat_map(|c| c.values.iter().copied())
            .filter(|v| v.is_finite())
    };
    let lo = finite().fold(f64::INFINITY, f64::min);
    let hi = finite().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else if lo.is_finite() {
        (lo - 0.5, lo + 0.5)
    } else {
        (0.0, 1.0)
    };
    let epochs = curves
        .iter()
        .map(|c| c.values.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let x = |e: usize| left + pw * e as f64 / (epochs - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{title}</text>"#,
        left + pw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (v, label) in [(lo, format!("{lo:.4}")), (hi, format!("{hi:.4}"))] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
    }
    for e in [0, epochs - 1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(e),
            top + ph + 18.0,
            e + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#,
        left + pw / 2.0,
        h - 10.0
    );
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = c
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(e, &v)| format!("{:.2},{:.2}", x(e), y(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 20.0,
            ly - 4.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{ly}">{}</text>"#, lx + 26.0, c.name);
    }
    s.push_str("</svg>\n");
    s
}

fn put(dir: &Path, name: &str, contents: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| ExpError::io(&path, e))?;
    out.push(PathBuf::from(name));
    Ok(())
}

/// Writes the requested renderings of `record` into `dir` and returns the
/// file names. Every number comes from a stored field of the record.
pub fn emit_report(
    record: &RunRecord,
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let (header, rows) = metric_rows(record);
    let grid = record.grid.as_ref().map(grid_rows);
    for format in formats {
        match format {
            ReportFormat::Text => {
                let mut text = format!(
                    "experiment {}  pipeline {}\n\n",
                    record.experiment_id,
                    record.pipeline.name()
                );
                text.push_str(&aligned_table(&header, &rows));
                if let Some((gh, gr)) = &grid {
                    text.push_str("\nvalidation accuracy by learning rate and epochs\n");
                    text.push_str(&aligned_table(gh, gr));
                }
                put(dir, "metrics.txt", &text, &mut out)?;
                if let Some((gh, gr)) = &grid {
                    put(dir, "grid.txt", &aligned_table(gh, gr), &mut out)?;
                }
            }
            ReportFormat::Csv => {
                put(dir, "metrics.csv", &csv_table(&header, &rows)?, &mut out)?;
                if !record.curves.is_empty() {
                    put(dir, "loss.csv", &curves_csv(&record.curves)?, &mut out)?;
                }
                if let Some(g) = &record.grid {
                    put(dir, "grid.csv", &g.to_csv(), &mut out)?;
                }
            }
            ReportFormat::Json => {
                let reports: Vec<&MetricsReport> =
                    record.reports.iter().map(|r| &r.report).collect();
                put(
                    dir,
                    "metrics.json",
                    &serde_json::to_string_pretty(&reports)?,
                    &mut out,
                )?;
            }
            ReportFormat::Svg => {
                if !record.curves.is_empty() {
                    let title = format!("{} training curves", record.pipeline.name());
                    put(
                        dir,
                        "loss.svg",
                        &curves_svg(&title, &record.curves),
                        &mut out,
                    )?;
                }
            }
        }
    }
    Ok(out)
}
