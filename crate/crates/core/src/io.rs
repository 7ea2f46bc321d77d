//! CSV and JSON files.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::data::DataMatrix;
use crate::error::{IsdeError, Result};

/// Parses CSV text of decimal floats, one observation per row. A first line
/// that does not parse as numbers is taken as a header and skipped.
pub fn parse_csv<R: Read>(reader: R) -> Result<DataMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| IsdeError::Data(format!("line {}: {e}", i + 1)))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let row = match parsed {
            Ok(row) => row,
            Err(_) if i == 0 => continue,
            Err(e) => return Err(IsdeError::Data(format!("line {}: {e}", i + 1))),
        };
        if let Some(bad) = row.iter().position(|v| !v.is_finite()) {
            return Err(IsdeError::Data(format!(
                "line {}, column {}: value is not finite",
                i + 1,
                bad + 1
            )));
        }
        match n_cols {
            None => n_cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(IsdeError::Data(format!(
                    "line {} has {} fields, expected {c}",
                    i + 1,
                    row.len()
                )))
            }
            Some(_) => {}
        }
        values.extend(row);
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| IsdeError::Data("no numeric rows".into()))?;
    DataMatrix::new(n_rows, n_cols, values)
}

pub fn read_csv(path: &Path) -> Result<DataMatrix> {
    let file = std::fs::File::open(path)
        .map_err(|e| IsdeError::Data(format!("cannot open {}: {e}", path.display())))?;
    parse_csv(std::io::BufReader::new(file))
}

/// Writes `data` with an optional header line. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv<W: Write>(out: W, data: &DataMatrix, header: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => IsdeError::Io(e),
        other => IsdeError::Io(std::io::Error::other(format!("{other:?}"))),
    };
    if let Some(h) = header {
        w.write_record(h).map_err(io)?;
    }
    for row in data.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_string(value)?)?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let with = parse_csv("a,b\n0.1,0.2\n0.3,0.4\n".as_bytes()).unwrap();
        let without = parse_csv("0.1,0.2\n0.3,0.4\n".as_bytes()).unwrap();
        assert_eq!(with, without);
        assert_eq!((with.n_rows(), with.n_cols()), (2, 2));
    }

    #[test]
    fn bad_rows() {
        assert!(matches!(parse_csv("0.1,0.2\n0.3\n".as_bytes()), Err(IsdeError::Data(_))));
        assert!(matches!(parse_csv("0.1,0.2\n0.3,x\n".as_bytes()), Err(IsdeError::Data(_))));
        assert!(matches!(parse_csv("x,y\n".as_bytes()), Err(IsdeError::Data(_))));
        assert!(matches!(parse_csv("0.1,NaN\n".as_bytes()), Err(IsdeError::Data(_))));
    }

    #[test]
    fn csv_round_trip() {
        let m = DataMatrix::from_rows(&[vec![0.1, 1.0 / 3.0], vec![1e-17, 1.0]]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &m, Some(&["x1".into(), "x2".into()])).unwrap();
        let back = parse_csv(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }
}
