//! Dataset directory layout.
//!
//! `manifest.json` lists every case with its client, shape and raster file
//! names. Rasters are small binary files:
//!
//! ```text
//! "FSR1"   magic
//! u8       element kind (0 = f64 image, 1 = u8 mask)
//! u32 u32  height, width
//! payload  little-endian f64 or one byte per pixel
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::io_util::ByteReader;
use crate::tensor::Tensor;

const RASTER_MAGIC: &[u8; 4] = b"FSR1";
const FORMAT: &str = "fedseg-dataset-1";
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub generator_digest: String,
    pub cases: Vec<CaseEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub client_id: usize,
    pub case_id: usize,
    pub height: usize,
    pub width: usize,
    pub image: String,
    pub label: String,
    pub brain_mask: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Image = 0,
    Mask = 1,
}

fn encode_raster(t: &Tensor, kind: Kind) -> Vec<u8> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut out = Vec::with_capacity(13 + t.len() * 8);
    out.extend_from_slice(RASTER_MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    match kind {
        Kind::Image => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Kind::Mask => out.extend(t.data().iter().map(|&v| (v != 0.0) as u8)),
    }
    out
}

fn decode_raster(bytes: &[u8], path: &Path, kind: Kind, h: usize, w: usize) -> Result<Tensor> {
    let mut r = ByteReader::new(bytes, path);
    if r.take(4, "magic")? != RASTER_MAGIC {
        return Err(r.error_at(0, "bad raster magic"));
    }
    if r.u8("kind")? != kind as u8 {
        return Err(r.error_at(4, "unexpected raster kind"));
    }
    let (fh, fw) = (r.u32("height")? as usize, r.u32("width")? as usize);
    if (fh, fw) != (h, w) {
        return Err(r.error_at(5, &format!("raster is {fh}x{fw} but manifest declares {h}x{w}")));
    }
    let n = h * w;
    let data = match kind {
        Kind::Image => r.f64s(n, "pixels")?,
        Kind::Mask => {
            let start = r.offset();
            let raw = r.take(n, "mask")?;
            if let Some(pos) = raw.iter().position(|&b| b > 1) {
                return Err(r.error_at(start + pos as u64, "mask byte is not 0 or 1"));
            }
            raw.iter().map(|&b| b as f64).collect()
        }
    };
    if r.remaining() != 0 {
        return Err(r.error_at(r.offset(), "trailing bytes"));
    }
    Tensor::new(vec![1, h, w], data)
}

fn file_stem(s: &Sample) -> String {
    format!("c{}_case{:04}", s.client_id, s.case_id)
}

/// Writes `samples` into `dir` (created if missing).
pub fn save_dataset(samples: &[Sample], dir: &Path, generator_digest: &str) -> Result<DatasetManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cases = Vec::with_capacity(samples.len());
    for s in samples {
        let stem = file_stem(s);
        let entry = CaseEntry {
            client_id: s.client_id,
            case_id: s.case_id,
            height: s.height(),
            width: s.width(),
            image: format!("{stem}.img"),
            label: format!("{stem}.lbl"),
            brain_mask: format!("{stem}.msk"),
        };
        for (name, t, kind) in [
            (&entry.image, &s.image, Kind::Image),
            (&entry.label, &s.label, Kind::Mask),
            (&entry.brain_mask, &s.brain_mask, Kind::Mask),
        ] {
            let path = dir.join(name);
            fs::write(&path, encode_raster(t, kind)).map_err(|e| Error::io(&path, e))?;
        }
        cases.push(entry);
    }
    let manifest = DatasetManifest {
        format: FORMAT.to_string(),
        generator_digest: generator_digest.to_string(),
        cases,
    };
    let path = dir.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a dataset written by [`save_dataset`]. Nothing is returned unless
/// every case decodes cleanly.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Sample>)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        offset: 0,
        reason: e.to_string(),
    })?;
    if manifest.format != FORMAT {
        return Err(Error::Format {
            path,
            offset: 0,
            reason: format!("unsupported dataset format {:?}", manifest.format),
        });
    }
    let read = |name: &str, kind: Kind, c: &CaseEntry| -> Result<Tensor> {
        let p: PathBuf = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        decode_raster(&bytes, &p, kind, c.height, c.width)
    };
    let samples = manifest
        .cases
        .iter()
        .map(|c| {
            let s = Sample {
                image: read(&c.image, Kind::Image, c)?,
                label: read(&c.label, Kind::Mask, c)?,
                brain_mask: read(&c.brain_mask, Kind::Mask, c)?,
                client_id: c.client_id,
                case_id: c.case_id,
            };
            if s.label.data().iter().zip(s.brain_mask.data()).any(|(l, m)| l > m) {
                return Err(Error::Format {
                    path: dir.join(&c.label),
                    offset: 0,
                    reason: "lesion label extends outside the brain mask".into(),
                });
            }
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, samples))
}
