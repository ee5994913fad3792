//! `FLOW1` field files: the ASCII magic `FLOW1\n`, one line of JSON header,
//! then `n²` row-major little-endian `f64` samples.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid2D, RealField};
use crate::{Error, Result};

const MAGIC: &[u8] = b"FLOW1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub n: usize,
    pub length: f64,
    pub dtype: String,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn write_field(
    path: &Path,
    field: &RealField,
    metadata: &BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let grid = field.grid();
    let header = FieldHeader {
        n: grid.n(),
        length: grid.length(),
        dtype: "f64".into(),
        metadata: metadata.clone(),
    };
    let mut buf = Vec::with_capacity(MAGIC.len() + 256 + 8 * grid.len());
    buf.extend_from_slice(MAGIC);
    serde_json::to_writer(&mut buf, &header)?;
    buf.push(b'\n');
    for v in field.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(RealField, FieldHeader)> {
    let bytes = fs::read(path)?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| corrupt("bad magic"))?;
    let eol = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| corrupt("unterminated header"))?;
    let header: FieldHeader =
        serde_json::from_slice(&rest[..eol]).map_err(|e| corrupt(&format!("header: {e}")))?;
    if header.dtype != "f64" {
        return Err(corrupt(&format!("unsupported dtype {}", header.dtype)));
    }
    let grid = Grid2D::new(header.n, header.length)?;
    let payload = &rest[eol + 1..];
    if payload.len() != 8 * grid.len() {
        return Err(corrupt(&format!(
            "payload has {} bytes, expected {}",
            payload.len(),
            8 * grid.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = RealField::new(grid, data)?;
    Ok((field, header))
}
