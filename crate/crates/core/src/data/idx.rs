//! Big-endian IDX files as distributed with MNIST.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Raw unsigned-byte IDX content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl IdxArray {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.bytes.len());
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.bytes);
        out
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Idx {
            path: path.to_path_buf(),
            offset: bytes.len(),
            detail: format!("file ends before {what}"),
        })
}

/// Parses an IDX buffer whose magic must equal `expected_magic`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0, path, "the magic number")?;
    if magic != expected_magic {
        return Err(Error::Idx {
            path: path.to_path_buf(),
            offset: 0,
            detail: format!("bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}"),
        });
    }
    let rank = (magic & 0xff) as usize;
    let mut dims = Vec::with_capacity(rank);
    for axis in 0..rank {
        dims.push(be_u32(bytes, 4 + 4 * axis, path, &format!("dimension {axis}"))? as usize);
    }
    let header = 4 + 4 * rank;
    let expected = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
    let body = &bytes[header..];
    match expected {
        Some(n) if n == body.len() => Ok(IdxArray {
            dims,
            bytes: body.to_vec(),
        }),
        Some(n) if n > body.len() => Err(Error::Idx {
            path: path.to_path_buf(),
            offset: bytes.len(),
            detail: format!("truncated: header promises {n} data bytes, found {}", body.len()),
        }),
        Some(n) => Err(Error::Idx {
            path: path.to_path_buf(),
            offset: header + n,
            detail: format!("{} unexpected trailing bytes", body.len() - n),
        }),
        None => Err(Error::Idx {
            path: path.to_path_buf(),
            offset: 4,
            detail: format!("dimensions {dims:?} overflow"),
        }),
    }
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, expected_magic, path)
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    fs::write(path, array.to_bytes()).map_err(|e| Error::io(path, e))
}
