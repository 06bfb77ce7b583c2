//! Binary field snapshots: one text header line followed by little-endian `f64` values.
//!
//! Header: `CHDF1 nx ny Lx Ly time name checksum`, where the checksum is the 64-bit
//! FNV-1a hash of the payload bytes in hexadecimal.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid2D, ScalarField};

pub const MAGIC: &str = "CHDF1";

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub time: f64,
    pub name: String,
    pub checksum: u64,
}

impl SnapshotHeader {
    pub fn to_line(&self) -> String {
        format!(
            "{MAGIC} {} {} {} {} {} {} {:016x}\n",
            self.nx, self.ny, self.lx, self.ly, self.time, self.name, self.checksum
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::SnapshotFormat(format!("{what} in header `{}`", line.trim_end()));
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 8 || parts[0] != MAGIC {
            return Err(bad("expected 8 fields starting with CHDF1"));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad real"));
        Ok(SnapshotHeader {
            nx: int(parts[1])?,
            ny: int(parts[2])?,
            lx: real(parts[3])?,
            ly: real(parts[4])?,
            time: real(parts[5])?,
            name: parts[6].to_string(),
            checksum: u64::from_str_radix(parts[7], 16).map_err(|_| bad("bad checksum"))?,
        })
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn payload(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

/// Serializes a field to bytes.
pub fn encode(field: &ScalarField, time: f64, name: &str) -> Result<Vec<u8>> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::SnapshotFormat(format!("invalid field name `{name}`")));
    }
    let grid = field.grid();
    let body = payload(field.values());
    let header = SnapshotHeader {
        nx: grid.nx(),
        ny: grid.ny(),
        lx: grid.lx(),
        ly: grid.ly(),
        time,
        name: name.to_string(),
        checksum: fnv1a64(&body),
    };
    let mut out = header.to_line().into_bytes();
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses bytes produced by [`encode`], verifying size and checksum.
pub fn decode(bytes: &[u8]) -> Result<(SnapshotHeader, Vec<f64>)> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::SnapshotFormat("missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::SnapshotFormat("header is not UTF-8".into()))?;
    let header = SnapshotHeader::parse(line)?;
    let body = &bytes[nl + 1..];
    let expected = header
        .nx
        .checked_mul(header.ny)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::SnapshotFormat("grid size overflows".into()))?;
    if body.len() != expected {
        return Err(Error::SnapshotFormat(format!(
            "payload has {} bytes, expected {expected}",
            body.len()
        )));
    }
    let sum = fnv1a64(body);
    if sum != header.checksum {
        return Err(Error::SnapshotFormat(format!(
            "checksum mismatch: header {:016x}, payload {sum:016x}",
            header.checksum
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8 bytes")))
        .collect();
    Ok((header, values))
}

pub fn write_snapshot(path: &Path, field: &ScalarField, time: f64, name: &str) -> Result<()> {
    let bytes = encode(field, time, name)?;
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    file.flush()?;
    Ok(())
}

pub fn read_snapshot_raw(path: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    decode(&fs::read(path)?)
}

/// Reads a snapshot and checks that it lives on `grid`.
pub fn read_snapshot(path: &Path, grid: &Grid2D) -> Result<(SnapshotHeader, ScalarField)> {
    let (header, values) = read_snapshot_raw(path)?;
    if header.nx != grid.nx() || header.ny != grid.ny() || header.lx != grid.lx() || header.ly != grid.ly() {
        return Err(Error::GridMismatch(format!(
            "snapshot {} is {}x{} on {}x{}, expected {grid:?}",
            path.display(),
            header.nx,
            header.ny,
            header.lx,
            header.ly
        )));
    }
    let field = ScalarField::new(grid, values).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    Ok((header, field))
}

/// Reads a snapshot and builds the grid from its header.
pub fn read_snapshot_with_grid(path: &Path) -> Result<(SnapshotHeader, ScalarField)> {
    let (header, values) = read_snapshot_raw(path)?;
    let grid = Grid2D::new(header.nx, header.ny, header.lx, header.ly)
        .map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    let field = ScalarField::new(&grid, values).map_err(|e| Error::SnapshotFormat(e.to_string()))?;
    Ok((header, field))
}
