//! `FSX1` tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FSX1"
//! 4       1           dtype (0 = f32 little-endian)
//! 5       1           ndim
//! 6       8·ndim      dims, u64 little-endian
//! ...     4·Πdims     payload, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"FSX1";
pub const DTYPE_F32: u8 = 0;

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let dims = t.dims();
    let mut out = Vec::with_capacity(6 + 8 * dims.len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(DTYPE_F32);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let fmt = |field: &'static str, detail: String| Error::Format { field, detail };
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let seen = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(fmt("magic", format!("bad magic {seen:?}, expected \"FSX1\"")));
    }
    let dtype = *bytes
        .get(4)
        .ok_or_else(|| fmt("dtype", "file ends before dtype byte".into()))?;
    if dtype != DTYPE_F32 {
        return Err(fmt("dtype", format!("unsupported dtype code {dtype}")));
    }
    let ndim = *bytes
        .get(5)
        .ok_or_else(|| fmt("ndim", "file ends before ndim byte".into()))? as usize;
    if ndim == 0 {
        return Err(fmt("ndim", "rank 0 is not allowed".into()));
    }
    let header = 6 + 8 * ndim;
    if bytes.len() < header {
        return Err(fmt(
            "dims",
            format!("need {} bytes of dims, have {}", 8 * ndim, bytes.len() - 6),
        ));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for chunk in bytes[6..header].chunks_exact(8) {
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        let d = usize::try_from(d)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| fmt("dims", format!("invalid dimension {d}")))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| fmt("dims", "element count overflows".into()))?;
        dims.push(d);
    }
    let payload = &bytes[header..];
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| fmt("dims", "payload size overflows".into()))?;
    if payload.len() < expected {
        return Err(fmt(
            "payload",
            format!("truncated: expected {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(fmt(
            "payload",
            format!(
                "{} trailing bytes after {expected}",
                payload.len() - expected
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Tensor::new(dims, data).map_err(|e| fmt("payload", e.to_string()))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}
