//! Evaluation reports and their table/CSV rendering.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::BenchReport;
use crate::error::{Error, Result};
use crate::retrieval::MetricsReport;

/// Output of the eval stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub model_hash: String,
    /// Rerank mode that produced the lists.
    pub mode: String,
    pub reranker: MetricsReport,
    /// First-stage `P@N` for the same questions.
    pub tfidf: BTreeMap<String, f64>,
}

/// Parses JSON, turning serde's missing-field message into
/// [`Error::MissingField`].
pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        match msg.strip_prefix("missing field `").and_then(|r| r.split_once('`')) {
            Some((field, _)) => Error::MissingField(field.to_string()),
            None => Error::Json(e),
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub mode: String,
    pub p: Option<f64>,
    pub pbt: Option<f64>,
    pub ptb: Option<f64>,
    pub counter_speedup: Option<f64>,
    pub wall_speedup: Option<f64>,
}

/// One row per evaluated mode (plus the first-stage row), then one per
/// benchmarked mode without metrics.
pub fn build_rows(evals: &[EvalReport], bench: Option<&BenchReport>, n: usize) -> Vec<ReportRow> {
    let speedups = |mode: &str| {
        bench
            .and_then(|b| b.modes.iter().find(|m| m.mode.name() == mode))
            .map(|m| (m.counter_speedup_vs_concat, m.wall_speedup_vs_concat))
    };
    let mut rows = Vec::new();
    if let Some(first) = evals.first() {
        rows.push(ReportRow {
            mode: "tfidf".into(),
            p: first.tfidf.get(&format!("P@{n}")).copied(),
            pbt: None,
            ptb: None,
            counter_speedup: None,
            wall_speedup: None,
        });
    }
    for e in evals {
        let s = speedups(&e.mode);
        rows.push(ReportRow {
            mode: e.mode.clone(),
            p: e.reranker.get("P", n),
            pbt: e.reranker.get("PBT", n),
            ptb: e.reranker.get("PTB", n),
            counter_speedup: s.map(|s| s.0),
            wall_speedup: s.map(|s| s.1),
        });
    }
    if let Some(b) = bench {
        for m in &b.modes {
            if !evals.iter().any(|e| e.mode == m.mode.name()) {
                rows.push(ReportRow {
                    mode: m.mode.name().into(),
                    p: None,
                    pbt: None,
                    ptb: None,
                    counter_speedup: Some(m.counter_speedup_vs_concat),
                    wall_speedup: Some(m.wall_speedup_vs_concat),
                });
            }
        }
    }
    rows
}

fn headers(n: usize) -> [String; 6] {
    [
        "mode".into(),
        format!("P@{n}"),
        format!("PBT@{n}"),
        format!("PTB@{n}"),
        "counter_speedup".into(),
        "wall_speedup".into(),
    ]
}

fn cell(v: Option<f64>, suffix: &str, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.digits$}{suffix}"))
}

/// Fixed-column text table.
pub fn render_table(rows: &[ReportRow], n: usize) -> String {
    let header = headers(n);
    let body: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            [
                r.mode.clone(),
                cell(r.p, "", 3),
                cell(r.pbt, "", 3),
                cell(r.ptb, "", 3),
                cell(r.counter_speedup, "x", 2),
                cell(r.wall_speedup, "x", 2),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..6)
        .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |cols: &[String; 6]| {
        cols.iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * 5));
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

pub fn write_csv<W: Write>(rows: &[ReportRow], n: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers(n))?;
    let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.mode.clone(),
            f(r.p),
            f(r.pbt),
            f(r.ptb),
            f(r.counter_speedup),
            f(r.wall_speedup),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| Error::invalid(format!("bad number {s:?}")))
        }
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != 6 {
                return Err(Error::invalid(format!("expected 6 columns, found {}", rec.len())));
            }
            Ok(ReportRow {
                mode: rec[0].to_string(),
                p: parse(&rec[1])?,
                pbt: parse(&rec[2])?,
                ptb: parse(&rec[3])?,
                counter_speedup: parse(&rec[4])?,
                wall_speedup: parse(&rec[5])?,
            })
        })
        .collect()
}
