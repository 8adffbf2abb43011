//! Report files:
//!
//! * `rows.csv`: `country,model,T,horizon,region,prediction,actual,abs_error`
//! * `summary.json`: `{model: {"1-3": e, "1-7": e, "1-14": e}}`
//! * `skipped.csv`, `cells.json`: cells left out and what each cell used
//! * `correlations.csv`: `region,shift,pearson` (empty when undefined)
//! * `case_stats.csv`: `region,mean,std,max_diff`
//! * `notes.json`: cells behind every summary value, skipped cell count and
//!   the approximations used by the families present

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{CaseStats, Correlation, ErrorReport, Family, ReportRow};
use crate::error::{Error, Result};

/// Horizon ranges of the summary table.
pub const HORIZON_RANGES: [(usize, usize); 3] = [(1, 3), (1, 7), (1, 14)];

#[derive(Debug, Clone, Default)]
pub struct ReportExtras {
    pub correlations: Vec<Correlation>,
    pub case_stats: Vec<CaseStats>,
}

fn write_csv<T: Serialize>(path: &Path, header: &[&str], items: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for item in items {
        w.serialize(item).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
}

/// Families realized by an approximation, with the note attached to reports.
pub const APPROXIMATIONS: [(Family, &str); 1] = [(
    Family::Arima,
    "ARIMA is approximated by a least-squares AR(p) fit on the d-times differenced series (no moving-average terms)",
)];

fn notes(report: &ErrorReport) -> serde_json::Value {
    let approximations: serde_json::Map<String, serde_json::Value> = APPROXIMATIONS
        .iter()
        .filter(|(f, _)| report.rows.iter().any(|r| r.model == f.label()))
        .map(|(f, note)| (f.label().to_string(), serde_json::Value::from(*note)))
        .collect();
    serde_json::json!({
        "cells": report.summary_cells(),
        "skipped_cells": report.skipped.len(),
        "approximations": approximations,
    })
}

pub fn emit_report(report: &ErrorReport, dir: &Path, extras: &ReportExtras) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("rows.csv"),
        &["country", "model", "T", "horizon", "region", "prediction", "actual", "abs_error"],
        &report.rows,
    )?;
    write_json(&dir.join("summary.json"), &report.summary())?;
    write_json(&dir.join("notes.json"), &notes(report))?;
    write_csv(&dir.join("skipped.csv"), &["country", "model", "T", "horizon", "reason"], &report.skipped)?;
    write_json(&dir.join("cells.json"), &report.cells)?;
    write_csv(&dir.join("correlations.csv"), &["region", "shift", "pearson"], &extras.correlations)?;
    write_csv(&dir.join("case_stats.csv"), &["region", "mean", "std", "max_diff"], &extras.case_stats)?;
    Ok(())
}

pub fn load_rows(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ErrorReport {
        let rows = (1..=14)
            .flat_map(|j| {
                ["a", "b"].map(|region| ReportRow {
                    country: "X".into(),
                    model: "MPNN".into(),
                    t: 20,
                    horizon: j,
                    region: region.into(),
                    prediction: 0.1 * j as f64 + 1.0 / 3.0,
                    actual: j as f64,
                    abs_error: (0.1 * j as f64 + 1.0 / 3.0 - j as f64).abs(),
                })
            })
            .collect();
        ErrorReport { rows, ..Default::default() }
    }

    #[test]
    fn reloaded_rows_reproduce_aggregates_and_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        emit_report(&r, dir.path(), &ReportExtras::default()).unwrap();
        let back = ErrorReport { rows: load_rows(&dir.path().join("rows.csv")).unwrap(), ..Default::default() };
        for (k, ranges) in r.summary() {
            for (range, v) in ranges {
                assert!((back.summary()[&k][&range] - v).abs() < 1e-9);
            }
        }
        let first = fs::read(dir.path().join("rows.csv")).unwrap();
        emit_report(&r, dir.path(), &ReportExtras::default()).unwrap();
        assert_eq!(fs::read(dir.path().join("rows.csv")).unwrap(), first);
    }

    #[test]
    fn empty_report_writes_headers_and_empty_object() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&ErrorReport::default(), dir.path(), &ReportExtras::default()).unwrap();
        let rows = fs::read_to_string(dir.path().join("rows.csv")).unwrap();
        assert_eq!(rows, "country,model,T,horizon,region,prediction,actual,abs_error\n");
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary, serde_json::json!({}));
        assert_eq!(fs::read_to_string(dir.path().join("correlations.csv")).unwrap(), "region,shift,pearson\n");
    }

    #[test]
    fn notes_count_cells_and_flag_arima() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report();
        r.rows.iter_mut().take(2).for_each(|row| row.model = "ARIMA".into());
        emit_report(&r, dir.path(), &ReportExtras::default()).unwrap();
        let notes: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("notes.json")).unwrap()).unwrap();
        assert_eq!(notes["cells"]["MPNN"]["1-3"], 2);
        assert_eq!(notes["cells"]["MPNN"]["1-14"], 13);
        assert_eq!(notes["cells"]["ARIMA"]["1-14"], 1);
        assert!(notes["approximations"]["ARIMA"].as_str().unwrap().contains("AR(p)"));
    }
}
