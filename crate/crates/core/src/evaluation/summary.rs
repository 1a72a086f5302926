use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalRecord};
use crate::catalog::Category;

pub const COLUMNS: [&str; 9] = [
    "Category",
    "Feature Label",
    "Model",
    "Sample",
    "M Conf.",
    "SE Conf.",
    "M Recall",
    "M Prec.",
    "n",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub category: Category,
    pub label: String,
    pub model: String,
    pub sample: String,
    pub mean_confidence: f64,
    pub se_confidence: f64,
    /// `None` when no record in the group has ground truths.
    pub mean_recall: Option<f64>,
    pub mean_precision: Option<f64>,
    pub n: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Standard error of the mean with the sample (n − 1) standard deviation.
pub fn standard_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / (n as f64).sqrt()
}

/// One row per (category, label, model, sample), in that sort order.
pub fn summarize(records: &[EvalRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Category, &str, &str, &str), Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((
                r.category,
                r.label.as_str(),
                r.model.as_str(),
                r.sample.as_str(),
            ))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((category, label, model, sample), rs)| {
            let conf: Vec<f64> = rs.iter().map(|r| r.confidence).collect();
            let recall: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.recall))
                .collect();
            let precision: Vec<f64> = rs
                .iter()
                .filter_map(|r| r.metrics.as_ref().map(|m| m.precision))
                .collect();
            SummaryRow {
                category,
                label: label.to_string(),
                model: model.to_string(),
                sample: sample.to_string(),
                mean_confidence: mean(&conf).unwrap_or(0.0),
                se_confidence: standard_error(&conf),
                mean_recall: mean(&recall),
                mean_precision: mean(&precision),
                n: rs.len(),
            }
        })
        .collect()
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

pub fn write_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), EvalError> {
    let err = |e: csv::Error| EvalError::Output(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS).map_err(err)?;
    for r in rows {
        w.write_record([
            r.category.name().to_string(),
            r.label.clone(),
            r.model.clone(),
            r.sample.clone(),
            format!("{:.4}", r.mean_confidence),
            format!("{:.4}", r.se_confidence),
            opt(r.mean_recall, 4),
            opt(r.mean_precision, 4),
            r.n.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Output(e.to_string()))
}

/// Aligned plain-text table with two-decimal numbers.
pub fn write_text<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<(), EvalError> {
    let cells: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.category.name().to_string(),
                r.label.clone(),
                r.model.clone(),
                r.sample.clone(),
                format!("{:.2}", r.mean_confidence),
                format!("{:.2}", r.se_confidence),
                opt(r.mean_recall, 2),
                opt(r.mean_precision, 2),
                r.n.to_string(),
            ]
        })
        .collect();
    let mut widths = COLUMNS.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let io = |e: std::io::Error| EvalError::Output(e.to_string());
    let line = |row: &[String]| {
        row.iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i < 4 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let header: Vec<String> = COLUMNS.iter().map(|s| s.to_string()).collect();
    writeln!(out, "{}", line(&header).trim_end()).map_err(io)?;
    for row in &cells {
        writeln!(out, "{}", line(row).trim_end()).map_err(io)?;
    }
    Ok(())
}
