//! Binary matrix files and small CSV helpers.
//!
//! Matrix layout: a 16-byte header (`b"TOPT"`, `u32` rows, `u32` cols, `u32`
//! reserved = 0, all little-endian) followed by `rows * cols` little-endian
//! `f64` values in row-major order.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TOPT";
pub const HEADER_LEN: usize = 16;

pub fn encode_matrix(m: &DMatrix<f64>) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.nrows())
        .map_err(|_| Error::InvalidArgument(format!("{} rows do not fit u32", m.nrows())))?;
    let cols = u32::try_from(m.ncols())
        .map_err(|_| Error::InvalidArgument(format!("{} cols do not fit u32", m.ncols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_matrix(bytes: &[u8]) -> std::result::Result<DMatrix<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("file has {} bytes, header needs {HEADER_LEN}", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("missing TOPT magic".into());
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(1), word(2));
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .ok_or("dimension overflow")?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(format!(
            "{rows}x{cols} payload needs {expected} bytes, found {}",
            body.len()
        ));
    }
    let mut vals = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    // row-major payload into a column-major matrix
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = vals.next().unwrap();
        }
    }
    Ok(m)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    fs::write(path, encode_matrix(m)?)?;
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_matrix(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}

/// Writes a singular-value spectrum as `index,sigma,sigma_rel`.
pub fn save_spectrum_csv(path: impl AsRef<Path>, sigma: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "sigma", "sigma_rel"])?;
    let s1 = sigma.first().copied().unwrap_or(0.0);
    for (i, s) in sigma.iter().enumerate() {
        let rel = if s1 > 0.0 { s / s1 } else { 0.0 };
        w.write_record([(i + 1).to_string(), s.to_string(), rel.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_spectrum_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let s = rec
            .get(1)
            .and_then(|s| s.parse::<f64>().ok())
            .ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("bad spectrum row {:?}", rec),
            })?;
        out.push(s);
    }
    Ok(out)
}
