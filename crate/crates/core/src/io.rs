//! FMAG1 binary field snapshots and their JSON sidecars.
//!
//! Layout, all little-endian: the ASCII magic `FMAG1`, `n` as `u64`, `h`, the three
//! centre coordinates, `s` and `p` as `f64`, then `n^3` interleaved `(re, im)` pairs
//! in row-major order.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{FracmagError, Result};
use crate::grid::{Field, Generator, Grid};
use crate::potential::MagneticPotential;

pub const MAGIC: &[u8; 5] = b"FMAG1";
const HEADER_LEN: usize = 5 + 8 * 7;

/// Exponents stored in a snapshot header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub grid: Grid,
    pub s: f64,
    pub p: f64,
}

pub fn write_fmag<W: Write>(mut out: W, field: &Field, s: f64, p: f64) -> Result<()> {
    let g = field.grid();
    let mut buf = Vec::with_capacity(HEADER_LEN + 16 * field.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(g.n as u64).to_le_bytes());
    for v in [g.h, g.center[0], g.center[1], g.center[2], s, p] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for v in field.values() {
        buf.extend_from_slice(&v.re.to_le_bytes());
        buf.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn format_error(offset: usize, message: impl Into<String>) -> FracmagError {
    FracmagError::Format { offset, message: message.into() }
}

pub fn read_fmag<R: Read>(mut input: R) -> Result<(Field, SnapshotHeader)> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    parse_fmag(&bytes)
}

pub fn parse_fmag(bytes: &[u8]) -> Result<(Field, SnapshotHeader)> {
    if bytes.is_empty() {
        return Err(format_error(0, "empty snapshot"));
    }
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(format_error(0, "missing FMAG1 magic"));
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_error(bytes.len(), "truncated header"));
    }
    let word = |offset: usize| -> [u8; 8] { bytes[offset..offset + 8].try_into().expect("8-byte slice") };
    let n = u64::from_le_bytes(word(5));
    let f = |k: usize| f64::from_le_bytes(word(13 + 8 * k));
    let (h, center, s, p) = (f(0), [f(1), f(2), f(3)], f(4), f(5));
    let n_usize = usize::try_from(n).map_err(|_| format_error(5, "grid size does not fit in memory"))?;
    let grid = Grid::new(n_usize, h, center).map_err(|e| format_error(5, e.to_string()))?;
    let expected = grid
        .len()
        .checked_mul(16)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| format_error(5, "grid size overflows"))?;
    if bytes.len() != expected {
        return Err(format_error(
            bytes.len().min(expected),
            format!("expected {expected} bytes for n = {n}, found {}", bytes.len()),
        ));
    }
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let off = HEADER_LEN + 16 * i;
        let re = f64::from_le_bytes(word(off));
        let im = f64::from_le_bytes(word(off + 8));
        if !(re.is_finite() && im.is_finite()) {
            return Err(format_error(off, "non-finite value"));
        }
        values.push(Complex64::new(re, im));
    }
    Ok((Field::new(grid, values)?, SnapshotHeader { grid, s, p }))
}

/// JSON sidecar describing where a snapshot came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldMetadata {
    pub grid: Grid,
    pub s: f64,
    pub p: f64,
    pub potential: Option<MagneticPotential>,
    pub generator: Option<Generator>,
    /// Free-form role of the field, e.g. `minimizer` or `density`.
    pub role: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `path` (FMAG1) and its `.json` sidecar.
pub fn save_snapshot(path: &Path, field: &Field, meta: &FieldMetadata) -> Result<()> {
    write_fmag(BufWriter::new(File::create(path)?), field, meta.s, meta.p)?;
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut side, meta)?;
    side.write_all(b"\n")?;
    side.flush()?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<(Field, SnapshotHeader)> {
    read_fmag(BufReader::new(File::open(path)?))
}

pub fn load_metadata(path: &Path) -> Result<FieldMetadata> {
    Ok(serde_json::from_reader(BufReader::new(File::open(sidecar_path(path))?))?)
}
