//! `HGTN` binary tensors.
//!
//! ```text
//! "HGTN" | version: u32 = 1 | ndim: u32 | dims: u64 * ndim | f32 * prod(dims)
//! ```
//!
//! All integers and floats are little-endian. Values are stored as binary32,
//! so a roundtrip is exact only for values representable in f32.

use std::fs;
use std::path::Path;

use hgkit_core::Tensor;

pub const MAGIC: [u8; 4] = *b"HGTN";
pub const VERSION: u32 = 1;
pub const MAX_DIMS: u32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum TensorFileError {
    #[error("bad magic \"{}\": not an HGTN tensor file", .0.escape_ascii())]
    BadMagic([u8; 4]),
    #[error("unsupported HGTN version {0} (expected {VERSION})")]
    BadVersion(u32),
    #[error("tensor has {0} dimensions; at most {MAX_DIMS} are supported")]
    TooManyDims(u32),
    #[error("file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("payload is {actual} bytes but dims {dims:?} need {expected}")]
    PayloadMismatch {
        dims: Vec<u64>,
        expected: u64,
        actual: u64,
    },
    #[error("invalid tensor: {0}")]
    Tensor(#[from] hgkit_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.dims() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], TensorFileError> {
        if self.bytes.len() < n {
            return Err(TensorFileError::Truncated(what));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, TensorFileError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, TensorFileError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, TensorFileError> {
    let mut r = Reader { bytes };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(TensorFileError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(TensorFileError::BadVersion(version));
    }
    let ndim = r.u32("ndim")?;
    if ndim > MAX_DIMS {
        return Err(TensorFileError::TooManyDims(ndim));
    }
    let dims = (0..ndim).map(|_| r.u64("dims")).collect::<Result<Vec<_>, _>>()?;
    let expected = dims
        .iter()
        .try_fold(4u64, |acc, &d| acc.checked_mul(d))
        .unwrap_or(u64::MAX);
    let actual = r.bytes.len() as u64;
    if expected != actual {
        return Err(TensorFileError::PayloadMismatch {
            dims,
            expected,
            actual,
        });
    }
    let data = r
        .bytes
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(Tensor::new(dims.iter().map(|&d| d as usize).collect(), data)?)
}

pub fn read(path: &Path) -> Result<Tensor, TensorFileError> {
    decode(&fs::read(path)?)
}

pub fn write(path: &Path, t: &Tensor) -> Result<(), TensorFileError> {
    Ok(fs::write(path, encode(t))?)
}
