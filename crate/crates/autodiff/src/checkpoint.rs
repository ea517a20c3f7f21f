//! `TPRM` parameter container: little-endian, magic `TPRM`, `u32` version,
//! `u32` tensor count, then per tensor a `u32`-length-prefixed UTF-8 name,
//! `u32` rank, `u64` dims and `f32` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{AutodiffError, Result};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"TPRM";
const VERSION: u32 = 1;

pub fn write_params_to<W: Write>(mut w: W, params: &ParamStore<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_params(path: impl AsRef<Path>, params: &ParamStore<f32>) -> Result<()> {
    write_params_to(BufWriter::new(File::create(path)?), params)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_params_from<R: Read>(mut r: R) -> Result<ParamStore<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AutodiffError::Checkpoint(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AutodiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| AutodiffError::Checkpoint(format!("tensor name: {e}")))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    read_params_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_bitwise() {
        let mut p = ParamStore::new();
        p.insert("layer0.w", Tensor::from_fn(&[3, 2], |i| (i as f32 * 0.37).sin()));
        p.insert("latents", Tensor::from_fn(&[2, 4], |i| f32::from_bits(0x3f80_0001 + i as u32)));
        p.insert("s", Tensor::scalar(-0.0f32));
        let mut buf = Vec::new();
        write_params_to(&mut buf, &p).unwrap();
        assert_eq!(&buf[..4], b"TPRM");
        let back = read_params_from(buf.as_slice()).unwrap();
        for ((n1, t1), (n2, t2)) in p.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u32> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let buf = b"XXXX\x01\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            read_params_from(buf.as_slice()),
            Err(AutodiffError::Checkpoint(_))
        ));
    }
}
