//! CSV emission of accuracy records: header `T,e_sysid,e_qlearn[,crlb]`,
//! values with 17 significant digits so they read back bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Accuracy at one checkpoint. Columns of methods that were not run are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyRecord {
    pub t: usize,
    pub e_sysid: Option<f64>,
    pub e_qlearn: Option<f64>,
    pub median_err_sysid: Option<f64>,
    pub median_err_qlearn: Option<f64>,
    pub crlb: Option<f64>,
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders `records`. A column is present only if every record has it.
pub fn format_results(records: &[AccuracyRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidParameter("no records to emit".into()));
    }
    let has_sysid = records.iter().all(|r| r.e_sysid.is_some());
    let has_qlearn = records.iter().all(|r| r.e_qlearn.is_some());
    let has_crlb = records.iter().all(|r| r.crlb.is_some());
    let mut s = String::from("T");
    if has_sysid {
        s.push_str(",e_sysid");
    }
    if has_qlearn {
        s.push_str(",e_qlearn");
    }
    if has_crlb {
        s.push_str(",crlb");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{}", r.t);
        for (on, v) in [(has_sysid, r.e_sysid), (has_qlearn, r.e_qlearn), (has_crlb, r.crlb)] {
            if on {
                let _ = write!(s, ",{}", fmt17(v.expect("column present")));
            }
        }
        s.push('\n');
    }
    Ok(s)
}

pub fn emit_results(records: &[AccuracyRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_results(records)?)?;
    Ok(())
}

/// Inverse of [`format_results`]; median columns are not stored and come
/// back as `None`.
pub fn parse_results(text: &str) -> Result<Vec<AccuracyRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "empty results file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"T") {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected header `{header}`"),
        });
    }
    for c in &cols[1..] {
        if !matches!(*c, "e_sysid" | "e_qlearn" | "crlb") {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown column `{c}`"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(err(format!("expected {} fields", cols.len())));
        }
        let mut rec = AccuracyRecord {
            t: fields[0].parse().map_err(|e| err(format!("{e}")))?,
            e_sysid: None,
            e_qlearn: None,
            median_err_sysid: None,
            median_err_qlearn: None,
            crlb: None,
        };
        for (c, f) in cols[1..].iter().zip(&fields[1..]) {
            let v: f64 = f.parse().map_err(|e| err(format!("`{f}`: {e}")))?;
            match *c {
                "e_sysid" => rec.e_sysid = Some(v),
                "e_qlearn" => rec.e_qlearn = Some(v),
                _ => rec.crlb = Some(v),
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, s: Option<f64>, q: Option<f64>, c: Option<f64>) -> AccuracyRecord {
        AccuracyRecord {
            t,
            e_sysid: s,
            e_qlearn: q,
            median_err_sysid: None,
            median_err_qlearn: None,
            crlb: c,
        }
    }

    #[test]
    fn optional_columns_are_omitted() {
        let csv = format_results(&[rec(50, Some(0.5), None, None)]).unwrap();
        assert_eq!(csv, "T,e_sysid\n50,5.0000000000000000e-1\n");
        let csv = format_results(&[rec(50, Some(0.5), Some(1.0), Some(0.25))]).unwrap();
        assert!(csv.starts_with("T,e_sysid,e_qlearn,crlb\n"));
        assert!(format_results(&[]).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = vec![
            rec(100, Some(1.0 / 3.0), Some(std::f64::consts::PI * 1e-7), None),
            rec(1000, Some(2.0_f64.sqrt() * 1e-9), Some(f64::MIN_POSITIVE), None),
        ];
        let back = parse_results(&format_results(&recs).unwrap()).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn rejects_foreign_columns() {
        assert!(parse_results("T,other\n1,2\n").is_err());
        assert!(parse_results("T,e_sysid\n1\n").is_err());
    }
}
