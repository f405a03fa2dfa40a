//! Per-instance result records, per-method summaries and their rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::theory::TheoryRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Table,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// Position label such as `test-007`.
    pub instance: String,
    pub instance_digest: String,
    pub method: String,
    /// Empty when the method produced no model.
    pub model_digest: String,
    pub feasible: bool,
    pub objective: Option<f64>,
    pub oracle: f64,
    pub gap: Option<f64>,
    pub relaxations: usize,
    pub rounds: usize,
    pub fell_back: bool,
    /// Informational only.
    pub wall_ms: f64,
}

impl ResultRecord {
    pub fn gap_of(objective: Option<f64>, oracle: f64) -> Option<f64> {
        objective.map(|v| (v - oracle) / oracle.abs().max(1e-12))
    }
}

pub fn write_records<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub instances: usize,
    pub feasible_rate: f64,
    /// Over feasible results.
    pub mean_gap: f64,
    pub relaxations: usize,
    /// Relaxations relative to `exact` on the same instances, when present.
    pub relaxation_ratio: Option<f64>,
    pub median_rounds: usize,
    pub fallback_rate: f64,
}

/// One row per method, in first-seen order.
pub fn summarize(records: &[ResultRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(r.method.as_str()) {
            order.push(&r.method);
        }
        groups.entry(&r.method).or_default().push(r);
    }
    let exact: BTreeMap<&str, usize> = groups
        .get("exact")
        .map(|g| g.iter().map(|r| (r.instance_digest.as_str(), r.relaxations)).collect())
        .unwrap_or_default();
    order
        .into_iter()
        .map(|m| {
            let g = &groups[m];
            let n = g.len();
            let feasible: Vec<&&ResultRecord> = g.iter().filter(|r| r.feasible).collect();
            let gaps: Vec<f64> = feasible.iter().filter_map(|r| r.gap).collect();
            let relaxations = g.iter().map(|r| r.relaxations).sum();
            let relaxation_ratio = if g.iter().all(|r| exact.contains_key(r.instance_digest.as_str())) && !exact.is_empty() {
                let base: usize = g.iter().map(|r| exact[r.instance_digest.as_str()]).sum();
                (base > 0).then(|| relaxations as f64 / base as f64)
            } else {
                None
            };
            let mut rounds: Vec<usize> = g.iter().map(|r| r.rounds).collect();
            rounds.sort_unstable();
            SummaryRow {
                method: m.to_string(),
                instances: n,
                feasible_rate: feasible.len() as f64 / n.max(1) as f64,
                mean_gap: gaps.iter().sum::<f64>() / gaps.len().max(1) as f64,
                relaxations,
                relaxation_ratio,
                median_rounds: rounds.get(n / 2).copied().unwrap_or(0),
                fallback_rate: g.iter().filter(|r| r.fell_back).count() as f64 / n.max(1) as f64,
            }
        })
        .collect()
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:>w$}")).collect();
        let _ = writeln!(s, "{}", parts.join("  "));
    };
    line(&mut s, header.to_vec());
    line(&mut s, width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in rows {
        line(&mut s, r.iter().map(String::as_str).collect());
    }
    s
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}

fn render(header: &[&str], rows: &[Vec<String>], format: OutputFormat) -> String {
    match format {
        OutputFormat::Table => table(header, rows),
        OutputFormat::Csv => csv_text(header, rows),
    }
}

pub fn render_summary(rows: &[SummaryRow], format: OutputFormat) -> String {
    let header = ["method", "n", "feasible", "mean_gap_pct", "relaxations", "vs_exact", "median_rounds", "fallback"];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.instances.to_string(),
                format!("{:.3}", r.feasible_rate),
                format!("{:.3}", 100.0 * r.mean_gap),
                r.relaxations.to_string(),
                r.relaxation_ratio.map_or("-".into(), |v| format!("{v:.3}")),
                r.median_rounds.to_string(),
                format!("{:.3}", r.fallback_rate),
            ]
        })
        .collect();
    render(&header, &body, format)
}

pub fn render_theory(rows: &[TheoryRow], format: OutputFormat) -> String {
    let header = [
        "eps1", "eps2", "n", "a_recurrence", "a_closed", "fallback", "a_simulated", "a_se", "c_recurrence", "c_bound",
        "c_simulated", "c_se",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.eps1),
                format!("{}", r.eps2),
                r.n.to_string(),
                format!("{:.6}", r.a_recurrence),
                format!("{:.6}", r.a_closed),
                r.closed_fallback.to_string(),
                format!("{:.6}", r.a_simulated),
                format!("{:.6}", r.a_se),
                format!("{:.6}", r.c_recurrence),
                format!("{:.6}", r.c_bound),
                format!("{:.6}", r.c_simulated),
                format!("{:.6}", r.c_se),
            ]
        })
        .collect();
    render(&header, &body, format)
}
