//! Numeric CSV tables and parameter files.
//!
//! Parameter files are CSV with a leading shape comment `# p m`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::error::{DepthError, Result};

/// A rectangular numeric table, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: Option<Vec<String>>,
    pub data: DMatrix<f64>,
}

fn parse_err(path: &Path, message: String) -> DepthError {
    DepthError::Parse {
        path: path.to_path_buf(),
        message,
    }
}

fn io_err(path: &Path, source: std::io::Error) -> DepthError {
    DepthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_records(path: &Path, text: &str) -> Result<Vec<(u64, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(path, format!("malformed CSV: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        out.push((line, rec.iter().map(str::to_owned).collect()));
    }
    Ok(out)
}

fn parse_table(path: &Path, text: &str, allow_header: bool) -> Result<Dataset> {
    let mut records = read_records(path, text)?;
    if records.is_empty() {
        return Err(parse_err(path, "file is empty".into()));
    }
    let numeric = |s: &str| s.parse::<f64>().is_ok();
    let header = if allow_header && records[0].1.iter().all(|c| !numeric(c)) {
        Some(records.remove(0).1)
    } else {
        None
    };
    if records.is_empty() {
        return Err(parse_err(path, "file has a header but no data rows".into()));
    }
    let cols = header
        .as_ref()
        .map(|h| h.len())
        .unwrap_or(records[0].1.len());
    let rows = records.len();
    let mut data = DMatrix::zeros(rows, cols);
    for (i, (line, cells)) in records.iter().enumerate() {
        if cells.len() != cols {
            return Err(parse_err(
                path,
                format!("ragged row at line {line}: {} fields, expected {cols}", cells.len()),
            ));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(
                    path,
                    format!("non-numeric cell {cell:?} at line {line}, column {}", j + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_err(
                    path,
                    format!("non-finite cell {cell:?} at line {line}, column {}", j + 1),
                ));
            }
            data[(i, j)] = v;
        }
    }
    Ok(Dataset { header, data })
}

/// Reads a comma-separated numeric table with an optional header row.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_table(path, &text, true)
}

/// Reads a parameter matrix, checking its `# p m` shape line.
pub fn load_param(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let shape: Vec<usize> = first
        .trim()
        .strip_prefix('#')
        .map(|rest| rest.split_whitespace().filter_map(|t| t.parse().ok()).collect())
        .unwrap_or_default();
    let [p, m] = shape[..] else {
        return Err(parse_err(
            path,
            "first line must be a shape comment `# p m`".into(),
        ));
    };
    let table = parse_table(path, &text, false)?.data;
    if table.shape() != (p, m) {
        return Err(parse_err(
            path,
            format!(
                "shape comment says {p}×{m} but the table is {}×{}",
                table.nrows(),
                table.ncols()
            ),
        ));
    }
    Ok(table)
}

/// Renders a matrix in parameter-file format with round-trip precision.
pub fn format_param(m: &DMatrix<f64>) -> String {
    let mut out = format!("# {} {}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_param(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_param(m)).map_err(|e| io_err(path, e))
}

/// Writes text to `path`, reporting the path on failure.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path: PathBuf = path.as_ref().to_path_buf();
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}
