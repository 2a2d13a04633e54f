//! Flat numeric payload files.
//!
//! Layout: 4-byte magic `MRPF`, `u32` format version (LE), `u64` value count
//! (LE), then that many `f64` values (LE). Nothing follows the values.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MRPF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    if bytes.len() < HEADER_LEN {
        return Err(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(format!("unsupported payload version {version}"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != len.saturating_mul(8) {
        return Err(format!("header declares {len} values, body holds {} bytes", body.len()));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn read(path: &Path) -> Result<Vec<f64>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

pub fn write(path: &Path, values: &[f64]) -> Result<()> {
    std::fs::write(path, encode(values)).map_err(|e| Error::io(path, e))
}
