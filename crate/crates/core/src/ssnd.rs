//! SSND binary container: an id-keyed matrix with a fixed little-endian layout.
//!
//! Layout:
//! - bytes 0..4   magic `SSND`
//! - bytes 4..8   format version (u32 LE); 1 = f32 payload, 2 = f64 payload
//! - bytes 8..16  row count N (u64 LE)
//! - bytes 16..20 column count d (u32 LE)
//! - id table: N records of `[u16 LE byte length, UTF-8 bytes]`
//! - payload: N*d values, row-major, little-endian
//!
//! Version 1 is the interchange format for embedding sets. Version 2 reuses
//! the container for checkpoint tensors, whose f64 training state must
//! round-trip exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SSND";
pub const VERSION_F32: u32 = 1;
pub const VERSION_F64: u32 = 2;

fn check_ids(ids: &[String], rows: usize) -> Result<()> {
    if ids.len() != rows {
        return Err(Error::invalid_data(format!(
            "id count {} does not match row count {}",
            ids.len(),
            rows
        )));
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if id.is_empty() {
            return Err(Error::invalid_data("empty sample id"));
        }
        if id.len() > u16::MAX as usize {
            return Err(Error::invalid_data(format!(
                "sample id longer than {} bytes: {:?}...",
                u16::MAX,
                &id[..32.min(id.len())]
            )));
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid_data(format!("duplicate sample id {id:?}")));
        }
    }
    Ok(())
}

fn write_header<W: Write>(w: &mut W, version: u32, rows: u64, cols: u32) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    Ok(())
}

fn write_matrix<T, W: Write>(
    w: &mut W,
    version: u32,
    ids: &[String],
    data: &Array2<T>,
    to_bytes: impl Fn(&T) -> Vec<u8>,
) -> Result<()> {
    write_header(w, version, data.nrows() as u64, data.ncols() as u32)?;
    for id in ids {
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    for v in data.iter() {
        w.write_all(&to_bytes(v))?;
    }
    Ok(())
}

/// Write an id-keyed f32 matrix (format version 1). Validates ids and
/// finiteness before any bytes are written.
pub fn write_f32(path: &Path, ids: &[String], data: &Array2<f32>) -> Result<()> {
    check_ids(ids, data.nrows())?;
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid_data(format!("non-finite value {v} in matrix")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, VERSION_F32, ids, data, |v| v.to_le_bytes().to_vec())?;
    w.flush()?;
    Ok(())
}

/// Write an id-keyed f64 matrix (format version 2, checkpoint tensors).
pub fn write_f64(path: &Path, ids: &[String], data: &Array2<f64>) -> Result<()> {
    check_ids(ids, data.nrows())?;
    if let Some(v) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid_data(format!("non-finite value {v} in matrix")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix(&mut w, VERSION_F64, ids, data, |v| v.to_le_bytes().to_vec())?;
    w.flush()?;
    Ok(())
}

struct RawHeader {
    version: u32,
    rows: usize,
    cols: usize,
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<RawHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format(format!("{}: file too short for header", path.display())))?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "{}: bad magic {:?}, expected \"SSND\"",
            path.display(),
            magic
        )));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)
        .map_err(|_| Error::format(format!("{}: truncated header", path.display())))?;
    let version = u32::from_le_bytes(b4);
    r.read_exact(&mut b8)
        .map_err(|_| Error::format(format!("{}: truncated header", path.display())))?;
    let rows = u64::from_le_bytes(b8);
    r.read_exact(&mut b4)
        .map_err(|_| Error::format(format!("{}: truncated header", path.display())))?;
    let cols = u32::from_le_bytes(b4);
    let rows = usize::try_from(rows)
        .map_err(|_| Error::format(format!("{}: row count {rows} too large", path.display())))?;
    Ok(RawHeader {
        version,
        rows,
        cols: cols as usize,
    })
}

fn read_ids<R: Read>(r: &mut R, rows: usize, path: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(rows.min(1 << 20));
    for i in 0..rows {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2).map_err(|_| {
            Error::format(format!("{}: truncated id table at record {i}", path.display()))
        })?;
        let len = u16::from_le_bytes(b2) as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf).map_err(|_| {
            Error::format(format!("{}: truncated id table at record {i}", path.display()))
        })?;
        let id = String::from_utf8(buf).map_err(|_| {
            Error::format(format!("{}: id record {i} is not valid UTF-8", path.display()))
        })?;
        ids.push(id);
    }
    Ok(ids)
}

fn read_payload<R: Read>(r: &mut R, n_values: usize, width: usize, path: &Path) -> Result<Vec<u8>> {
    let n_bytes = n_values.checked_mul(width).ok_or_else(|| {
        Error::format(format!("{}: payload size overflows", path.display()))
    })?;
    let mut buf = vec![0u8; n_bytes];
    r.read_exact(&mut buf).map_err(|_| {
        Error::format(format!(
            "{}: truncated payload, expected {n_bytes} bytes",
            path.display()
        ))
    })?;
    // trailing bytes mean the declared shape does not match the payload
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format(format!(
            "{}: trailing bytes after declared payload",
            path.display()
        )));
    }
    Ok(buf)
}

/// Read a version-1 (f32) SSND file. Validates magic, version, payload
/// length, and id uniqueness.
pub fn read_f32(path: &Path) -> Result<(Vec<String>, Array2<f32>)> {
    let mut r = BufReader::new(File::open(path)?);
    let hdr = read_header(&mut r, path)?;
    if hdr.version != VERSION_F32 {
        return Err(Error::format(format!(
            "{}: unsupported format version {} (expected {})",
            path.display(),
            hdr.version,
            VERSION_F32
        )));
    }
    let ids = read_ids(&mut r, hdr.rows, path)?;
    check_ids(&ids, hdr.rows)?;
    let n_values = hdr.rows.checked_mul(hdr.cols).ok_or_else(|| {
        Error::format(format!("{}: matrix shape overflows", path.display()))
    })?;
    let buf = read_payload(&mut r, n_values, 4, path)?;
    let values: Vec<f32> = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let data = Array2::from_shape_vec((hdr.rows, hdr.cols), values)
        .expect("shape checked against payload length");
    Ok((ids, data))
}

/// Read a version-2 (f64) SSND file.
pub fn read_f64(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut r = BufReader::new(File::open(path)?);
    let hdr = read_header(&mut r, path)?;
    if hdr.version != VERSION_F64 {
        return Err(Error::format(format!(
            "{}: unsupported format version {} (expected {})",
            path.display(),
            hdr.version,
            VERSION_F64
        )));
    }
    let ids = read_ids(&mut r, hdr.rows, path)?;
    check_ids(&ids, hdr.rows)?;
    let n_values = hdr.rows.checked_mul(hdr.cols).ok_or_else(|| {
        Error::format(format!("{}: matrix shape overflows", path.display()))
    })?;
    let buf = read_payload(&mut r, n_values, 8, path)?;
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let data = Array2::from_shape_vec((hdr.rows, hdr.cols), values)
        .expect("shape checked against payload length");
    Ok((ids, data))
}
