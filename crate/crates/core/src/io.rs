//! CSV helpers for numeric tables.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reads a headerless CSV of numbers into rows. Errors name the offending line and field.
pub fn read_numeric_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    parse_records(&mut reader)
}

pub fn parse_numeric_csv(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    parse_records(&mut reader)
}

fn parse_records<R: std::io::Read>(reader: &mut csv::Reader<R>) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(field, s)| {
                s.parse::<f64>()
                    .map_err(|_| Error::Malformed(format!("line {}, field {}: not a number: {s:?}", line + 1, field + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads rows as vectors of a common length.
pub fn read_points_csv(path: impl AsRef<Path>) -> Result<Vec<DVector<f64>>> {
    let rows = read_numeric_csv(path)?;
    rows_to_points(rows)
}

pub fn rows_to_points(rows: Vec<Vec<f64>>) -> Result<Vec<DVector<f64>>> {
    let Some(first) = rows.first() else { return Ok(Vec::new()) };
    let d = first.len();
    rows.into_iter()
        .enumerate()
        .map(|(line, r)| {
            if r.len() != d {
                Err(Error::Malformed(format!("line {}: expected {d} fields, got {}", line + 1, r.len())))
            } else {
                Ok(DVector::from_vec(r))
            }
        })
        .collect()
}

/// Reads an `n × m` matrix, one row per line.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let points = read_points_csv(path)?;
    if points.is_empty() {
        return Err(Error::Malformed("empty matrix file".into()));
    }
    let m = points[0].len();
    Ok(DMatrix::from_fn(points.len(), m, |i, j| points[i][j]))
}

/// Writes one point per row.
pub fn write_points_csv(path: impl AsRef<Path>, points: &[DVector<f64>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for p in points {
        w.write_record(p.iter().map(|v| format_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}
