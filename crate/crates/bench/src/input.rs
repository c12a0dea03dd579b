//! Plain CSV inputs for the single-fit commands.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{BenchError, Result};

fn parse(field: &str, line: u64, path: &Path) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| BenchError::Config(format!("{}: line {line}: `{field}` is not a number", path.display())))
}

/// A headed table split into the `response` column and every other column.
pub fn read_design(path: &Path, response: &str) -> Result<(DMatrix<f64>, DVector<f64>, Vec<String>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let target = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| BenchError::Config(format!("{}: no column named `{response}`", path.display())))?;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        for (j, field) in rec.iter().enumerate() {
            let v = parse(field, line, path)?;
            if j == target {
                y.push(v);
            } else {
                x.push(v);
            }
        }
    }
    let p = headers.len() - 1;
    let features = headers.into_iter().enumerate().filter(|&(j, _)| j != target).map(|(_, h)| h).collect();
    Ok((DMatrix::from_row_slice(y.len(), p, &x), DVector::from_vec(y), features))
}

/// One coordinate per line, its observations as the fields. No header.
pub fn read_means(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push(rec.iter().map(|f| parse(f, line, path)).collect::<Result<Vec<f64>>>()?);
    }
    Ok(out)
}
