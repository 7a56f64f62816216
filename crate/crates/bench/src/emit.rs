//! CSV traces and JSON reports.

use hgdo_core::{SimTrace, TraceSample};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmitError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EmitError + '_ {
    move |source| EmitError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Shortest text that parses back to exactly `v`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || !v.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Write samples as CSV with the `TraceSample::columns` header.
pub fn write_csv<W: Write>(samples: &[TraceSample], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TraceSample::columns())?;
    for s in samples {
        w.write_record(s.to_row().into_iter().map(format_f64))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse CSV produced by [`write_csv`].
pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceSample>, String> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(|e| e.to_string())?.iter().map(String::from).collect();
    if header != TraceSample::columns() {
        return Err("header does not match the trace column layout".into());
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format!("row {}: `{f}`: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(TraceSample::from_row(&row).ok_or_else(|| format!("row {}: wrong field count", i + 1))?);
    }
    Ok(out)
}

pub fn emit_csv(trace: &SimTrace, path: &Path) -> Result<(), EmitError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_csv(&trace.samples, BufWriter::new(file)).map_err(|source| EmitError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_csv(path: &Path) -> Result<Vec<TraceSample>, EmitError> {
    let file = File::open(path).map_err(io_err(path))?;
    read_csv(file).map_err(|message| EmitError::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EmitError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| EmitError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn emit_text(text: &str, path: &Path) -> Result<(), EmitError> {
    std::fs::write(path, text).map_err(io_err(path))
}
