//! Report writers and input readers.

use std::io::Write;
use std::path::Path;

use gtr_core::fts::ConditioningVector;
use gtr_core::grid::GridShape;
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::CliError;

/// Writes `bytes` to `path` via a temporary file in the same directory, so a
/// failure never leaves a partial file behind. `None` writes to stdout.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match path {
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(CliError::internal)
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let mut tmp = NamedTempFile::new_in(dir).map_err(CliError::internal)?;
            tmp.write_all(bytes).map_err(CliError::internal)?;
            tmp.persist(path).map_err(|e| CliError::internal(e.error))?;
            Ok(())
        }
    }
}

pub fn json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(CliError::internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Builds CSV text from a header and rows.
pub fn csv<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>, CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(CliError::internal)?;
    for row in rows {
        w.write_record(row).map_err(CliError::internal)?;
    }
    w.into_inner().map_err(|e| CliError::internal(e.to_string()))
}

/// Plain (ASCII, P2) greymap of per-token values linearly rescaled to 0..=255.
/// Cells without a value are 0; a constant field maps to 0 everywhere.
pub fn pgm(shape: GridShape, values: &[Option<f64>]) -> Vec<u8> {
    let present = values.iter().flatten();
    let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let level = |v: Option<f64>| match v {
        Some(v) if span > 0.0 => ((v - lo) / span * 255.0).round() as u8,
        _ => 0,
    };
    let mut out = format!("P2\n{} {}\n255\n", shape.w(), shape.h());
    for row in values.chunks(shape.w()) {
        let line: Vec<String> = row.iter().map(|v| level(*v).to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

/// Reads `index,z0,z1,...` rows (no header). Ragged rows are rejected.
pub fn read_vectors(path: &Path) -> Result<Vec<(usize, ConditioningVector)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let bad = |what: &str| CliError::Config(format!("{} row {}: {what}", path.display(), line + 1));
        let mut fields = record.iter();
        let index: usize = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad("position index must be a non-negative integer"))?;
        let values: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("components must be numbers"))?;
        let z = ConditioningVector::new(values).map_err(|e| bad(&e.to_string()))?;
        out.push((index, z));
    }
    Ok(out)
}

/// Reads `position,score[,...]` rows as written by `fts-score`.
pub fn read_scores(path: &Path) -> Result<Vec<(usize, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let parsed = (
            record.get(0).and_then(|f| f.parse::<usize>().ok()),
            record.get(1).and_then(|f| f.parse::<f64>().ok()),
        );
        match parsed {
            (Some(i), Some(s)) => out.push((i, s)),
            _ => {
                return Err(CliError::Config(format!(
                    "{} row {}: expected position,score",
                    path.display(),
                    line + 2
                )))
            }
        }
    }
    Ok(out)
}
