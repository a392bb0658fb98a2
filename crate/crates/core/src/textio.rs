//! Versioned text container: one JSON header line followed by named CSV
//! matrix blocks.
//!
//! ```text
//! {"format":1,"kind":"price_dataset",...}
//! [prices 13x168]
//! 0.5,1.25e-3,...
//! ...
//! [multipliers 20x168]
//! ...
//! ```
//!
//! Numbers are written in Rust's shortest round-trip form, so reading a file
//! back reproduces every matrix bit for bit.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub fn format_number(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e12).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn write_matrix_csv(out: &mut String, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
}

pub fn render<H: Serialize>(header: &H, blocks: &[(&str, &DMatrix<f64>)]) -> Result<String> {
    let mut out = serde_json::to_string(header)?;
    out.push('\n');
    for (name, m) in blocks {
        let _ = writeln!(out, "[{name} {}x{}]", m.nrows(), m.ncols());
        write_matrix_csv(&mut out, m);
    }
    Ok(out)
}

/// A parsed container: the header plus blocks in file order.
pub struct Document<H> {
    pub header: H,
    pub blocks: Vec<(String, DMatrix<f64>)>,
}

impl<H> Document<H> {
    /// Removes and returns the named block, checking its shape.
    pub fn take(&mut self, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
        let pos = self
            .blocks
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Schema(format!("missing block [{name}]")))?;
        let (_, m) = self.blocks.remove(pos);
        if m.shape() != (rows, cols) {
            return Err(Error::Schema(format!(
                "block [{name}] is {}x{}, header implies {rows}x{cols}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

pub fn parse<H: DeserializeOwned>(text: &str) -> Result<Document<H>> {
    let mut lines = text.lines().enumerate().peekable();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file".into()))?;
    let header: H = serde_json::from_str(first)
        .map_err(|e| Error::Schema(format!("header line: {e}")))?;
    let mut blocks = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let tag = line
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| Error::Schema(format!("line {}: expected a block tag", lineno + 1)))?;
        let (name, shape) = tag
            .split_once(' ')
            .ok_or_else(|| Error::Schema(format!("line {}: malformed block tag", lineno + 1)))?;
        let (rows, cols) = shape
            .split_once('x')
            .and_then(|(r, c)| Some((r.parse::<usize>().ok()?, c.parse::<usize>().ok()?)))
            .ok_or_else(|| Error::Schema(format!("line {}: malformed block shape", lineno + 1)))?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (ln, row) = lines.next().ok_or_else(|| {
                Error::Schema(format!("block [{name}] truncated after {r} of {rows} rows"))
            })?;
            let before = data.len();
            for cell in row.split(',').filter(|_| cols > 0) {
                data.push(cell.trim().parse::<f64>().map_err(|_| {
                    Error::Schema(format!("line {}: bad number {cell:?}", ln + 1))
                })?);
            }
            if data.len() - before != cols {
                return Err(Error::Schema(format!(
                    "line {}: block [{name}] row has {} values, expected {cols}",
                    ln + 1,
                    data.len() - before
                )));
            }
        }
        if let Some((ln, next)) = lines.peek() {
            if !next.starts_with('[') && !next.trim().is_empty() {
                return Err(Error::Schema(format!(
                    "line {}: block [{name}] has more than {rows} rows",
                    ln + 1
                )));
            }
        }
        blocks.push((name.to_string(), DMatrix::from_row_slice(rows, cols, &data)));
    }
    Ok(Document { header, blocks })
}

/// Serde adapter for header floats that may be infinite or NaN, which JSON
/// numbers cannot carry. Non-finite values are written as `"inf"`, `"-inf"`
/// or `"NaN"`.
pub mod float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}
