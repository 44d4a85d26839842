//! Little-endian `f32` matrix container shared by feature files and
//! projection coordinates.
//!
//! Layout: `u32 n_rows`, `u32 n_cols`, then `n_rows * n_cols` `f32` values in
//! row-major order. All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

pub const HEADER_LEN: usize = 8;

#[derive(Debug, Error)]
pub enum BinMatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("matrix payload truncated: header declares {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("matrix payload has {extra} trailing bytes")]
    TrailingBytes { extra: usize },
}

/// Decoded matrix with values widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub values: Vec<f64>,
}

pub fn decode(bytes: &[u8]) -> Result<RawMatrix, BinMatError> {
    if bytes.len() < HEADER_LEN {
        return Err(BinMatError::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let n_rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let n_cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let expected = HEADER_LEN + n_rows * n_cols * 4;
    if bytes.len() < expected {
        return Err(BinMatError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(BinMatError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(RawMatrix {
        n_rows,
        n_cols,
        values,
    })
}

/// Encodes row-major `values`; entries are narrowed to `f32`.
pub fn encode(n_rows: usize, n_cols: usize, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), n_rows * n_cols, "value count does not match shape");
    let mut out = Vec::with_capacity(HEADER_LEN + values.len() * 4);
    out.extend_from_slice(&(n_rows as u32).to_le_bytes());
    out.extend_from_slice(&(n_cols as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn read_file(path: &Path) -> Result<RawMatrix, BinMatError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| BinMatError::Io {
            path: path.display().to_string(),
            source,
        })?;
    decode(&buf)
}

pub fn write_file(path: &Path, n_rows: usize, n_cols: usize, values: &[f64]) -> Result<(), BinMatError> {
    let bytes = encode(n_rows, n_cols, values);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|source| BinMatError::Io {
            path: path.display().to_string(),
            source,
        })
}
