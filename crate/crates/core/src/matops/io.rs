//! Plain-text matrix blocks: a `rows cols` header line followed by `rows`
//! lines of whitespace-separated decimals. Several blocks may follow each
//! other in one file; blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Parses every matrix block in `text`.
pub fn parse_matrices(text: &str) -> Result<Vec<DMatrix<f64>>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut out = Vec::new();
    while let Some((line, header)) = lines.next() {
        let dims = parse_row(header, line)?;
        let (rows, cols) = match dims.as_slice() {
            [r, c] if r.fract() == 0.0 && c.fract() == 0.0 && *r >= 0.0 && *c >= 0.0 => {
                (*r as usize, *c as usize)
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `rows cols` header, got `{header}`"),
                })
            }
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (line, row) = lines.next().ok_or(Error::Parse {
                line,
                message: format!("matrix block ends before {rows} rows were read"),
            })?;
            let values = parse_row(row, line)?;
            if values.len() != cols {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {cols} values, found {}", values.len()),
                });
            }
            data.extend(values);
        }
        out.push(DMatrix::from_row_slice(rows, cols, &data));
    }
    Ok(out)
}

fn parse_row(row: &str, line: usize) -> Result<Vec<f64>> {
    row.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                line,
                message: format!("`{tok}`: {e}"),
            })
        })
        .collect()
}

/// Renders one matrix block using shortest round-trip float formatting.
pub fn format_matrix(m: &DMatrix<f64>) -> String {
    let mut s = format!("{} {}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

pub fn read_matrices(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    parse_matrices(&std::fs::read_to_string(path)?)
}
