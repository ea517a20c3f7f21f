//! Little-endian primitives shared by the binary archive formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn write_f32(w: &mut impl Write, v: f32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub(crate) fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    read_array(r).map(u32::from_le_bytes)
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    read_array(r).map(u64::from_le_bytes)
}

pub(crate) fn read_f32(r: &mut impl Read) -> Result<f32> {
    read_array(r).map(f32::from_le_bytes)
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    read_array(r).map(f64::from_le_bytes)
}

/// Reads a 4-byte magic and a u32 version, rejecting anything else.
pub(crate) fn expect_header(r: &mut impl Read, magic: &[u8; 4], version: u32) -> Result<()> {
    let found: [u8; 4] = read_array(r)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&found)
        )));
    }
    let v = read_u32(r)?;
    if v != version {
        return Err(Error::Format(format!("unsupported version {v}")));
    }
    Ok(())
}

/// Guards allocations driven by untrusted counts.
pub(crate) fn capacity_hint(count: u64) -> usize {
    count.min(1 << 20) as usize
}
