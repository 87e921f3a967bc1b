//! CSV matrices and versioned JSON documents.
//!
//! Data files hold one variable per row and one sample per column. A first
//! line that does not parse as numbers is taken to be a header and skipped.
//! Numbers are written with 17 significant digits so a write/read round trip
//! is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covmodel::DataMatrix;
use crate::error::{Error, Result};

pub const SCHEMA: &str = "v1";

/// A JSON document tagged with `"schema": "v1"`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema: String,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            body,
        }
    }
}

pub fn to_json_string<T: Serialize>(body: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Versioned::new(body))?)
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, &Versioned::new(body))?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

/// Reads a versioned document, rejecting unknown schema tags.
pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let doc: Versioned<T> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if doc.schema != SCHEMA {
        return Err(Error::Data(format!(
            "unsupported schema '{}' in {}",
            doc.schema,
            path.display()
        )));
    }
    Ok(doc.body)
}

/// `17` significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn read_matrix<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if line == 0 => continue,
            Err(e) => return Err(Error::Data(format!("line {}: {e}", line + 1))),
        }
    }
    let p = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if p == 0 || n == 0 {
        return Err(Error::Data("empty matrix".into()));
    }
    if let Some(k) = rows.iter().position(|r| r.len() != n) {
        return Err(Error::Data(format!(
            "row {} has {} fields, expected {n}",
            k + 1,
            rows[k].len()
        )));
    }
    Ok(DMatrix::from_fn(p, n, |k, i| rows[k][i]))
}

pub fn read_matrix_file(path: &Path) -> Result<DMatrix<f64>> {
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_matrix(BufReader::new(f)).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn read_data_file(path: &Path) -> Result<DataMatrix> {
    DataMatrix::new(read_matrix_file(path)?)
}

pub fn write_matrix<W: Write>(out: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for k in 0..m.nrows() {
        w.write_record(m.row(k).iter().map(|&v| format_f64(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_matrix(BufWriter::new(File::create(path)?), m)
}
