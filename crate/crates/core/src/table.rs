//! Tabular summaries of evaluation reports.

use std::cmp::Ordering;

use crate::eval::EvalReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

pub const COLUMNS: [&str; 9] = ["M", "Mode", "Rec", "Pre", "F1", "X near", "X far", "Z near", "Z far"];

/// Fixed-point formatting. Ties on the exact binary value round to even.
pub fn fmt_fixed(v: f64, decimals: usize) -> String {
    format!("{v:.decimals$}")
}

fn pct(v: f64) -> String {
    fmt_fixed(100.0 * v, 1)
}

fn err(v: f64) -> String {
    fmt_fixed(v, 3)
}

fn row_cells(r: &EvalReport) -> Vec<String> {
    vec![
        r.label.m.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
        r.label.mode.clone().unwrap_or_else(|| "-".into()),
        pct(r.recall),
        pct(r.precision),
        pct(r.f1),
        err(r.x_err_near),
        err(r.x_err_far),
        err(r.z_err_near),
        err(r.z_err_far),
    ]
}

/// Orders rows by `(M, mode)`; unlabeled values sort first, ties keep input order.
pub fn sort_reports(reports: &[EvalReport]) -> Vec<&EvalReport> {
    let mut rows: Vec<&EvalReport> = reports.iter().collect();
    rows.sort_by(|a, b| match a.label.m.cmp(&b.label.m) {
        Ordering::Equal => a.label.mode.cmp(&b.label.mode),
        o => o,
    });
    rows
}

/// One row per report with the columns of [`COLUMNS`]. Recall, precision and
/// F1 are percentages with one decimal; errors are meters with three.
pub fn report_table(reports: &[EvalReport], format: TableFormat) -> String {
    let rows: Vec<Vec<String>> = sort_reports(reports).into_iter().map(row_cells).collect();
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str(&format!("| {} |\n", COLUMNS.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(COLUMNS.len())));
            for r in rows {
                out.push_str(&format!("| {} |\n", r.join(" | ")));
            }
        }
        TableFormat::Csv => {
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for r in rows {
                out.push_str(&r.join(","));
                out.push('\n');
            }
        }
    }
    out
}
