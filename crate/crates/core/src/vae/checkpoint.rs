//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "STFTVAE\0"
//! version    u32      1
//! fingerprint 32 bytes SHA-256 of the run configuration
//! count      u32
//! count × { name_len u32, name utf-8, rank u32, dims u64 × rank, values f64 × len }
//! digest     32 bytes SHA-256 of everything above
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::Vae;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

const MAGIC: &[u8; 8] = b"STFTVAE\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fingerprint(pub [u8; 32]);

impl Fingerprint {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }
}

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: Fingerprint,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &Vae, fingerprint: Fingerprint) -> Self {
        Self {
            fingerprint,
            tensors: model.named().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    /// Rebuilds the model, matching tensors by name.
    pub fn into_model(self) -> Result<Vae> {
        let mut by_name: std::collections::HashMap<String, Tensor> = self.tensors.into_iter().collect();
        let params = super::PARAM_SPECS
            .iter()
            .map(|(name, _)| {
                by_name.remove(*name).ok_or_else(|| Error::InvalidArgument(format!("checkpoint lacks tensor {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::InvalidArgument(format!("checkpoint has unknown tensor {extra}")));
        }
        Vae::from_params(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.0);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest: [u8; 32] = Sha256::digest(&out).into();
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |detail: String| Error::Checkpoint {
            path: path.to_path_buf(),
            detail,
        };
        if bytes.len() < MAGIC.len() + 4 + 32 + 4 + 32 {
            return Err(fail(format!("file is only {} bytes", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(fail("content digest mismatch (file corrupted or truncated)".into()));
        }
        let mut r = Reader { bytes: body, pos: 0 };
        if r.take(8).map_err(&fail)? != MAGIC {
            return Err(fail("bad magic".into()));
        }
        let version = r.u32().map_err(&fail)?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let fingerprint = Fingerprint(r.take(32).map_err(&fail)?.try_into().expect("32 bytes"));
        let count = r.u32().map_err(&fail)? as usize;
        let mut tensors = Vec::with_capacity(count.min(64));
        for _ in 0..count {
            let name_len = r.u32().map_err(&fail)? as usize;
            let name = std::str::from_utf8(r.take(name_len).map_err(&fail)?)
                .map_err(|_| fail("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32().map_err(&fail)? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(&fail)?;
            let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let len = len.ok_or_else(|| fail(format!("tensor {name} has an overflowing shape")))?;
            let raw = r.take(len.checked_mul(8).ok_or_else(|| fail("size overflow".into()))?).map_err(&fail)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Float)
                .collect();
            let tensor = Tensor::new(&shape, data).map_err(|e| fail(format!("tensor {name}: {e}")))?;
            tensors.push((name, tensor));
        }
        if r.pos != body.len() {
            return Err(fail(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { fingerprint, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("unexpected end of data at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn save_checkpoint(path: &Path, model: &Vae, fingerprint: Fingerprint) -> Result<()> {
    let bytes = Checkpoint::from_model(model, fingerprint).to_bytes();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Loads a model; when `expected` is given the stored fingerprint must match.
pub fn load_checkpoint(path: &Path, expected: Option<Fingerprint>) -> Result<Vae> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_bytes(&bytes, path)?;
    if let Some(expected) = expected {
        if expected != ckpt.fingerprint {
            return Err(Error::Fingerprint {
                expected: expected.to_string(),
                found: ckpt.fingerprint.to_string(),
            });
        }
    }
    ckpt.into_model().map_err(|e| Error::Checkpoint {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}
