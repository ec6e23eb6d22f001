use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, MeanStd};

use super::config::Method;
use super::runner::RunRecord;
use super::sweeps::{SweepKind, SweepTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::validation(format!("unknown report format {s:?}"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn pct(m: Option<MeanStd>) -> String {
    match m {
        Some(m) => format!("{:.2} ± {:.2}", 100.0 * m.mean, 100.0 * m.std),
        None => "n/a".into(),
    }
}

fn method_label(method: Method, strategy: impl std::fmt::Display) -> String {
    let m = match method {
        Method::LinearProbe => "LP",
        Method::Knn => "NN",
        Method::KnnPlus => "NN+",
    };
    format!("{m} ({strategy})")
}

fn results(record: &RunRecord) -> Result<&EvalReport> {
    record
        .report
        .as_ref()
        .ok_or_else(|| Error::validation("record holds no results (every split failed)"))
}

fn csv(record: &RunRecord) -> Result<String> {
    let report = results(record)?;
    let mut out = String::from("split_id,accuracy,auroc,oscr\n");
    for s in &report.per_split {
        writeln!(out, "{},{:.6},{},{}", s.split_id, s.accuracy, opt(s.auroc), opt(s.oscr)).unwrap();
    }
    if report.per_split.len() > 1 {
        writeln!(out, "mean,{:.6},{},{}", report.accuracy, opt(report.auroc), opt(report.oscr)).unwrap();
    }
    Ok(out)
}

fn markdown(record: &RunRecord) -> Result<String> {
    let report = results(record)?;
    let ms = &report.mean_std;
    let mut out = String::new();
    writeln!(out, "| Method | Acc | AUC | OSCR |").unwrap();
    writeln!(out, "|---|---|---|---|").unwrap();
    writeln!(
        out,
        "| {} | {} | {} | {} |",
        method_label(record.method, record.strategy),
        pct(Some(ms.accuracy)),
        pct(ms.auroc),
        pct(ms.oscr)
    )
    .unwrap();
    writeln!(out).unwrap();
    writeln!(out, "| Split | Acc | AUC | OSCR |").unwrap();
    writeln!(out, "|---|---|---|---|").unwrap();
    let p = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{:.2}", 100.0 * x));
    for s in &report.per_split {
        writeln!(out, "| {} | {} | {} | {} |", s.split_id, p(Some(s.accuracy)), p(s.auroc), p(s.oscr)).unwrap();
    }
    if !record.complete {
        writeln!(out).unwrap();
        writeln!(out, "Partial run, {} split(s) failed:", record.failures.len()).unwrap();
        writeln!(out).unwrap();
        for f in &record.failures {
            writeln!(out, "- {} at {}: {}", f.split, f.stage, f.message).unwrap();
        }
    }
    Ok(out)
}

/// Renders a record. Output depends only on the record, so two renders of
/// the same record are byte-identical.
pub fn render_report(record: &RunRecord, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv(record),
        ReportFormat::Json => record.to_json(),
        ReportFormat::Markdown => markdown(record),
    }
}

pub fn write_report(record: &RunRecord, format: ReportFormat, path: &Path) -> Result<()> {
    write_atomic(path, render_report(record, format)?.as_bytes())
}

fn status(row: &super::sweeps::SweepRow) -> &'static str {
    match (&row.record, row.is_complete()) {
        (None, _) => "failed",
        (Some(_), true) => "ok",
        (Some(_), false) => "partial",
    }
}

fn sweep_csv(table: &SweepTable) -> String {
    let with_variant = table.kind == SweepKind::Perturbation;
    let mut out = String::from(table.kind.column());
    if with_variant {
        out.push_str(",variant");
    }
    out.push_str(",accuracy,accuracy_std,auroc,auroc_std,oscr,oscr_std,status\n");
    for row in &table.rows {
        out.push_str(&row.value);
        if with_variant {
            write!(out, ",{}", row.variant.as_deref().unwrap_or("")).unwrap();
        }
        let ms = row.record.as_ref().and_then(|r| r.report.as_ref()).map(|r| &r.mean_std);
        for m in [ms.map(|m| m.accuracy), ms.and_then(|m| m.auroc), ms.and_then(|m| m.oscr)] {
            write!(out, ",{},{}", opt(m.map(|m| m.mean)), opt(m.map(|m| m.std))).unwrap();
        }
        writeln!(out, ",{}", status(row)).unwrap();
    }
    out
}

fn sweep_markdown(table: &SweepTable) -> String {
    let with_variant = table.kind == SweepKind::Perturbation;
    let mut out = String::new();
    let head = if with_variant { " | Training" } else { "" };
    writeln!(out, "| {}{head} | Acc | AUC | OSCR |", table.kind.column()).unwrap();
    writeln!(out, "|---{}|---|---|---|", if with_variant { "|---" } else { "" }).unwrap();
    for row in &table.rows {
        let variant = if with_variant {
            format!(" | {}", row.variant.as_deref().unwrap_or(""))
        } else {
            String::new()
        };
        match row.record.as_ref().and_then(|r| r.report.as_ref()) {
            Some(r) => {
                let ms = &r.mean_std;
                writeln!(
                    out,
                    "| {}{variant} | {} | {} | {} |",
                    row.value,
                    pct(Some(ms.accuracy)),
                    pct(ms.auroc),
                    pct(ms.oscr)
                )
                .unwrap();
            }
            None => {
                let msg = row.error.as_deref().unwrap_or("failed");
                writeln!(out, "| {}{variant} | failed: {msg} | | |", row.value).unwrap();
            }
        }
    }
    out
}

/// Renders a sweep table: one line per sweep point, mean and std across splits.
pub fn render_sweep(table: &SweepTable, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Csv => sweep_csv(table),
        ReportFormat::Markdown => sweep_markdown(table),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(table).map_err(|e| Error::Metadata(e.to_string()))?;
            s.push('\n');
            s
        }
    })
}

/// Writes `<stem>.csv`, `<stem>.md` and `<stem>.json` into `dir`.
pub fn write_sweep(table: &SweepTable, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for f in [ReportFormat::Csv, ReportFormat::Markdown, ReportFormat::Json] {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        write_atomic(&path, render_sweep(table, f)?.as_bytes())?;
    }
    Ok(())
}
