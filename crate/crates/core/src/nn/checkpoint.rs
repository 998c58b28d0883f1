//! Binary checkpoint format.
//!
//! ```text
//! "FSEG1"                        5 bytes
//! structure digest               32 bytes (SHA-256, see ParamSet::structure_digest)
//! entry count                    u32
//! per entry:
//!   name length, name            u32, UTF-8 bytes
//!   tag byte                     0 rest, 1 norm, 2 norm statistic, 3 rest statistic
//!   rank, extents                u32, u64 × rank
//!   values                       f64 × product(extents)
//! ```
//! All integers and floats are little-endian. Gradient and momentum buffers
//! are not stored.

use std::fs;
use std::path::Path;

use super::params::{tag_byte, tag_from_byte, ParamSet};
use crate::error::{Error, Result};
use crate::io_util::ByteReader;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"FSEG1";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.scalar_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.structure_digest());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for e in params.entries() {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.push(tag_byte(e.tag, e.kind));
        out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
        for &d in e.tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in e.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let mut r = ByteReader::new(bytes, path);
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(r.error_at(0, "bad magic, not a checkpoint"));
    }
    let digest: [u8; 32] = r.take(32, "digest")?.try_into().expect("32 bytes");
    let count = r.u32("entry count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_at = r.offset();
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| r.error_at(name_at, "name is not UTF-8"))?
            .to_string();
        let tag_at = r.offset();
        let (tag, kind) =
            tag_from_byte(r.u8("tag")?).ok_or_else(|| r.error_at(tag_at, "unknown tag byte"))?;
        let rank = r.u32("rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u64("extent").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error_at(tag_at, "extent overflow"))?;
        let values = r.f64s(n, "values")?;
        let tensor = Tensor::new(shape, values)?;
        params
            .push(name, tensor, tag, kind)
            .map_err(|e| r.error_at(name_at, &e.to_string()))?;
    }
    if r.remaining() != 0 {
        return Err(r.error_at(r.offset(), "trailing bytes after last entry"));
    }
    if params.structure_digest() != digest {
        return Err(r.error_at(MAGIC.len() as u64, "structure digest does not match entries"));
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
