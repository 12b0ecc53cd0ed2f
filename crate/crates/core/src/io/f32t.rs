//! `.f32t` tensor files: `F32T`, u32 rank, u32 extents, little-endian f32 values.

use std::fs;
use std::path::Path;

use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 4] = b"F32T";

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format { offset, msg: format!("truncated while reading {what}") })
}

/// Parses only the header, returning the extents and the header length.
pub fn decode_header(bytes: &[u8]) -> Result<(Vec<usize>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, expected `F32T`".into() });
    }
    let rank = read_u32(bytes, 4, "rank")? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Format { offset: 4, msg: format!("unsupported rank {rank}") });
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 8 + 4 * i;
        let d = read_u32(bytes, off, "extent")? as usize;
        if d == 0 {
            return Err(Error::Format { offset: off, msg: "zero extent".into() });
        }
        shape.push(d);
    }
    Ok((shape, 8 + 4 * rank))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (shape, header) = decode_header(bytes)?;
    let count: usize = shape.iter().product();
    let expected = header + 4 * count;
    if bytes.len() != expected {
        return Err(Error::Format {
            offset: bytes.len().min(expected),
            msg: format!("expected {expected} bytes for shape {shape:?}, found {}", bytes.len()),
        });
    }
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[header..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format { offset: header + 4 * i, msg: "non-finite value".into() });
        }
        data.push(T::of(v as f64));
    }
    Tensor::new(shape, data)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(t)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format { offset, msg: format!("{}: {msg}", path.display()) },
        other => other,
    })
}

/// Extents stored in a file, without reading the values.
pub fn peek_shape(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; 8 + 4 * 8];
    let mut n = 0;
    while n < head.len() {
        match f.read(&mut head[n..]).map_err(|e| Error::io(path, e))? {
            0 => break,
            k => n += k,
        }
    }
    head.truncate(n);
    Ok(decode_header(&head)?.0)
}
