//! Binary tensor files.
//!
//! Layout, all integers unsigned 32-bit little-endian:
//!
//! ```text
//! "QTNS" | version = 1 | ndim | dims[ndim] | dtype = 0 | payload
//! ```
//!
//! The payload is `product(dims)` IEEE-754 binary64 values, little-endian,
//! row-major. Nothing may follow the payload.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::tensor::DenseTensor;

pub const MAGIC: &[u8; 4] = b"QTNS";
pub const VERSION: u32 = 1;
pub const DTYPE_F64_LE: u32 = 0;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("truncated file: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("bad magic {found:?} at offset 0, expected \"QTNS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {version} at offset 4")]
    UnsupportedVersion { version: u32 },
    #[error("unsupported dtype code {code} at offset {offset}")]
    UnsupportedDtype { code: u32, offset: usize },
    #[error("tensor has no dimensions (offset 8)")]
    NoDimensions,
    #[error("dimension {index} is zero (offset {offset})")]
    ZeroDimension { index: usize, offset: usize },
    #[error("element count overflows at offset {offset}")]
    Overflow { offset: usize },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let available = self.bytes.len() - self.pos;
        if available < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn encode(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.ndim() + 8 * t.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F64_LE.to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<DenseTensor, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { version });
    }
    let ndim = r.u32()? as usize;
    if ndim == 0 {
        return Err(FormatError::NoDimensions);
    }
    let mut shape = Vec::with_capacity(ndim.min(16));
    let mut count: usize = 1;
    for index in 0..ndim {
        let offset = r.pos;
        let d = r.u32()? as usize;
        if d == 0 {
            return Err(FormatError::ZeroDimension { index, offset });
        }
        count = count.checked_mul(d).ok_or(FormatError::Overflow { offset })?;
        shape.push(d);
    }
    let dtype_offset = r.pos;
    let code = r.u32()?;
    if code != DTYPE_F64_LE {
        return Err(FormatError::UnsupportedDtype {
            code,
            offset: dtype_offset,
        });
    }
    let payload_len = count
        .checked_mul(8)
        .ok_or(FormatError::Overflow { offset: r.pos })?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes {
            offset: r.pos,
            extra: bytes.len() - r.pos,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(DenseTensor::new(shape, data).expect("shape validated above"))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<DenseTensor, FormatError> {
    decode(&fs::read(path)?)
}

pub fn write_tensor(path: impl AsRef<Path>, t: &DenseTensor) -> Result<(), FormatError> {
    fs::write(path, encode(t))?;
    Ok(())
}
