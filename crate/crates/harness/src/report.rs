//! Result tables as CSV or JSON.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};
use crate::experiment::ResultRow;

pub const CSV_HEADER: [&str; 7] = [
    "method",
    "sigma",
    "pulses_per_layer",
    "avg_pulses",
    "acc_mean",
    "acc_std",
    "seeds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportMeta {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
}

impl ReportMeta {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Self {
            tool: "xbar".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config_hash: config_hash.into(),
        }
    }
}

fn bracketed(pulses: &[usize]) -> String {
    let inner: Vec<String> = pulses.iter().map(usize::to_string).collect();
    format!("[{}]", inner.join(", "))
}

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.sigma.to_string(),
            bracketed(&r.pulses_per_layer),
            format!("{:.2}", r.avg_pulses),
            format!("{:.6}", r.acc_mean),
            format!("{:.6}", r.acc_std),
            r.seeds.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

#[derive(Serialize)]
struct JsonReport<'a> {
    #[serde(flatten)]
    meta: &'a ReportMeta,
    rows: &'a [ResultRow],
}

pub fn render_json(rows: &[ResultRow], meta: &ReportMeta) -> String {
    let mut text =
        serde_json::to_string_pretty(&JsonReport { meta, rows }).expect("rows serialize");
    text.push('\n');
    text
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    meta: &'a ReportMeta,
    file: &'a str,
    rows: usize,
    sha256: String,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Writes `<dir>/<stem>.csv` plus a `<stem>.manifest.json` carrying the
/// config hash and tool version, or a self-describing `<stem>.json`.
/// Returns the written paths.
pub fn emit_report(
    rows: &[ResultRow],
    format: ReportFormat,
    dir: &Path,
    stem: &str,
    meta: &ReportMeta,
) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(HarnessError::Data(
            "refusing to write a report with no rows".into(),
        ));
    }
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    match format {
        ReportFormat::Csv => {
            let name = format!("{stem}.csv");
            let text = render_csv(rows);
            let manifest = Manifest {
                meta,
                file: &name,
                rows: rows.len(),
                sha256: hex::encode(Sha256::digest(text.as_bytes())),
            };
            let csv_path = dir.join(&name);
            let manifest_path = dir.join(format!("{stem}.manifest.json"));
            write(&csv_path, &text)?;
            let mut m = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
            m.push('\n');
            write(&manifest_path, &m)?;
            Ok(vec![csv_path, manifest_path])
        }
        ReportFormat::Json => {
            let path = dir.join(format!("{stem}.json"));
            write(&path, &render_json(rows, meta))?;
            Ok(vec![path])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Method;

    fn row() -> ResultRow {
        ResultRow {
            method: Method::Gbo,
            sigma: 10.0,
            pulses_per_layer: vec![16, 6, 12, 6, 10, 14, 16],
            avg_pulses: 80.0 / 7.0,
            acc_mean: 0.8827,
            acc_std: 0.0125,
            seeds: 5,
        }
    }

    #[test]
    fn one_row_is_header_plus_line() {
        let text = render_csv(&[row()]);
        assert_eq!(
            text,
            "method,sigma,pulses_per_layer,avg_pulses,acc_mean,acc_std,seeds\n\
             GBO,10,\"[16, 6, 12, 6, 10, 14, 16]\",11.43,0.882700,0.012500,5\n"
        );
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("reports");
        let meta = ReportMeta::new("abc");
        assert!(emit_report(&[], ReportFormat::Csv, &out, "r", &meta).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn re_emitting_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let meta = ReportMeta::new("abc");
        let rows = vec![
            row(),
            ResultRow {
                method: Method::Baseline,
                ..row()
            },
        ];
        for format in [ReportFormat::Csv, ReportFormat::Json] {
            let a = emit_report(&rows, format, dir.path(), "a", &meta).unwrap();
            let b = emit_report(&rows, format, dir.path(), "b", &meta).unwrap();
            for (pa, pb) in a.iter().zip(&b) {
                let (ta, tb) = (std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
                if pa.extension().unwrap() == "csv" {
                    assert_eq!(ta, tb);
                } else {
                    let ja: serde_json::Value = serde_json::from_slice(&ta).unwrap();
                    assert_eq!(ja["config_hash"], "abc");
                    assert_eq!(ja["version"], env!("CARGO_PKG_VERSION"));
                }
            }
        }
        let json = std::fs::read_to_string(dir.path().join("a.json")).unwrap();
        assert_eq!(
            json,
            std::fs::read_to_string(dir.path().join("b.json")).unwrap()
        );
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["rows"][0]["method"], "GBO");
        assert_eq!(v["rows"][0]["avg_pulses"].as_f64().unwrap(), 80.0 / 7.0);
    }

    #[test]
    fn unwritable_directory_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = emit_report(
            &[row()],
            ReportFormat::Csv,
            &blocker.join("sub"),
            "r",
            &ReportMeta::new("h"),
        )
        .unwrap_err();
        assert!(matches!(err, HarnessError::Io { .. }));
    }
}
