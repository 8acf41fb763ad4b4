use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use super::aggregate::{Summary, SummaryRow};
use super::normalize::CellKey;
use super::scores::Split;
use crate::error::{Error, Result};
use crate::merge::MethodKind;

const MISSING: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::invalid("format", format!("expected csv or markdown, got `{other}`"))),
        }
    }
}

/// Two decimals, ties to even. Values within 1e-9 of a tie count as ties,
/// so binary noise in e.g. `0.125` does not decide the rounding.
pub fn format_value(v: f64) -> String {
    let scaled = v * 100.0;
    let floor = scaled.floor();
    let frac = scaled - floor;
    let rounded = if (frac - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 {
            floor
        } else {
            floor + 1.0
        }
    } else {
        scaled.round()
    };
    let cents = rounded as i64;
    let sign = if cents < 0 { "-" } else { "" };
    let abs = cents.unsigned_abs();
    format!("{sign}{}.{:02}", abs / 100, abs % 100)
}

fn method_rank(method: &str) -> usize {
    MethodKind::ALL
        .iter()
        .position(|k| k.display_name() == method || k.id() == method)
        .unwrap_or(MethodKind::ALL.len())
}

fn method_order(a: &str, b: &str) -> Ordering {
    method_rank(a).cmp(&method_rank(b)).then_with(|| a.cmp(b))
}

/// `1B < 8B < 24B < 64B`: leading number scaled by a K/M/B/T suffix.
fn size_key(size: &str) -> f64 {
    let digits: String = size.chars().take_while(|c| c.is_ascii_digit() || *c == '.').collect();
    let Ok(n) = digits.parse::<f64>() else {
        return f64::INFINITY;
    };
    let scale = match size[digits.len()..].trim().to_ascii_uppercase().as_str() {
        "K" => 1e3,
        "M" => 1e6,
        "B" | "G" => 1e9,
        "T" => 1e12,
        _ => 1.0,
    };
    n * scale
}

fn size_order(a: &str, b: &str) -> Ordering {
    size_key(a).total_cmp(&size_key(b)).then_with(|| a.cmp(b))
}

struct Table<'a> {
    base_model: &'a str,
    split: Split,
    methods: Vec<&'a str>,
    columns: Vec<(&'a str, usize)>,
    cells: BTreeMap<(&'a str, &'a str, usize), f64>,
}

fn sorted_columns<'a>(rows: impl Iterator<Item = &'a SummaryRow>) -> Vec<(&'a str, usize)> {
    let set: BTreeSet<(&str, usize)> = rows.map(|r| (r.cell.size.as_str(), r.cell.n_experts)).collect();
    let mut columns: Vec<_> = set.into_iter().collect();
    columns.sort_by(|a, b| size_order(a.0, b.0).then(a.1.cmp(&b.1)));
    columns
}

fn tables(summary: &Summary) -> Vec<Table<'_>> {
    let mut groups: BTreeMap<(&str, Split), Vec<&SummaryRow>> = BTreeMap::new();
    for row in &summary.rows {
        groups.entry((row.cell.base_model.as_str(), row.cell.split)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((base_model, split), rows)| {
            let mut methods: Vec<&str> = rows.iter().map(|r| r.cell.method.as_str()).collect();
            methods.sort_by(|a, b| method_order(a, b));
            methods.dedup();
            Table {
                base_model,
                split,
                methods,
                columns: sorted_columns(rows.iter().copied()),
                cells: rows
                    .iter()
                    .map(|r| ((r.cell.method.as_str(), r.cell.size.as_str(), r.cell.n_experts), r.value))
                    .collect(),
            }
        })
        .collect()
}

fn cell_text(table: &Table<'_>, method: &str, size: &str, n: usize) -> String {
    table
        .cells
        .get(&(method, size, n))
        .map_or_else(|| MISSING.to_string(), |v| format_value(*v))
}

fn footer(summary: &Summary) -> String {
    format!(
        "Excluded rows (missing or non-positive reference): {}. Dropped categories: {}.",
        summary.excluded_rows, summary.dropped_categories
    )
}

fn markdown(summary: &Summary) -> String {
    let mut out = String::new();
    let tables = tables(summary);
    if tables.is_empty() {
        log::warn!("report summary is empty");
        out.push_str("| Merging Method (↓) |\n|---|\n| # of Experts (→) |\n\n");
    }
    for table in &tables {
        let _ = writeln!(out, "### {} ({})\n", table.base_model, table.split);
        out.push_str("| Merging Method (↓) |");
        for (size, _) in &table.columns {
            let _ = write!(out, " {size} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(table.columns.len()));
        out.push_str("\n| # of Experts (→) |");
        for (_, n) in &table.columns {
            let _ = write!(out, " {n} |");
        }
        out.push('\n');
        for method in &table.methods {
            let _ = write!(out, "| {method} |");
            for (size, n) in &table.columns {
                let _ = write!(out, " {} |", cell_text(table, method, size, *n));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out.push_str(&footer(summary));
    out.push('\n');
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(summary: &Summary) -> String {
    let columns = sorted_columns(summary.rows.iter());
    if columns.is_empty() {
        log::warn!("report summary is empty");
    }
    let mut out = String::from("base_model,split,Merging Method (↓)");
    for (size, _) in &columns {
        let _ = write!(out, ",{}", csv_field(size));
    }
    out.push_str("\n,,# of Experts (→)");
    for (_, n) in &columns {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    for table in tables(summary) {
        for method in &table.methods {
            let _ = write!(out, "{},{},{}", csv_field(table.base_model), table.split, csv_field(method));
            for (size, n) in &columns {
                let _ = write!(out, ",{}", cell_text(&table, method, size, *n));
            }
            out.push('\n');
        }
    }
    let _ = writeln!(out, "# {}", footer(summary));
    out
}

/// Renders one table per (base model, split): methods as rows, model size by
/// number of experts as columns, values at two decimals, absent cells as a dash.
pub fn emit_report(summary: &Summary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(summary),
        ReportFormat::Csv => csv(summary),
    }
}

pub fn write_report(summary: &Summary, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, emit_report(summary, format)).map_err(|e| Error::io(format!("writing report {}", path.display()), e))
}

#[derive(Debug, Deserialize)]
struct ReportedRow {
    base_model: String,
    split: Split,
    method: String,
    size: String,
    n_experts: usize,
    value: f64,
}

/// Reads already-aggregated cell values from CSV with header
/// `base_model,split,method,size,n_experts,value`.
pub fn read_reported_table(reader: impl Read) -> Result<Summary> {
    let mut csv = csv::Reader::from_reader(reader);
    let rows = csv
        .deserialize()
        .map(|r| {
            r.map(|r: ReportedRow| SummaryRow {
                cell: CellKey {
                    base_model: r.base_model,
                    split: r.split,
                    method: r.method,
                    size: r.size,
                    n_experts: r.n_experts,
                },
                value: r.value,
                n_seeds: 1,
            })
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::csv("parsing reported table", e))?;
    Ok(Summary::from_rows(rows))
}
