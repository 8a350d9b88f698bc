//! Shared CSV/JSON plumbing.
//!
//! Every numeric CSV field is written with 17 significant digits so that a
//! value survives a write/read cycle bit-for-bit, and rows end in a bare LF.

use std::io::{Read, Write};

use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn parse_real(field: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: {field:?}")))
}

pub fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

pub fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(r)
}

/// Reads a CSV with a header row into (header, rows of reals).
pub fn read_real_table<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.iter().map(parse_real).collect::<Result<Vec<_>>>()?;
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "row has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(digest.as_slice())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(s: &str) -> Result<T> {
    Ok(serde_json::from_str(s)?)
}
