//! `MCDS` records files and their JSON manifest.
//!
//! Records layout (little-endian): magic `MCDS`, u16 version, u32 count,
//! u32 height, width, channels; then per record: u64 id, u32 label,
//! u32 digit count followed by that many (f64 scale, u32 x, y, w, h, u64
//! source), i64 variant_of (−1 for none), u32 warp JSON length and bytes,
//! and the f32 image payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::compose::{ComposeConfig, ComposedSample, GlyphBox, SourceKind, Split};
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::warp::Warp2d;

const MAGIC: &[u8; 4] = b"MCDS";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub name: String,
    pub source_split: Split,
    pub count: usize,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub compose: ComposeConfig,
    pub seed: u64,
    pub source: SourceKind,
    pub placement: String,
    pub splits: Vec<SplitEntry>,
}

impl DatasetManifest {
    pub fn split(&self, name: &str) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Usage(format!("dataset has no split {name:?}")))
    }
}

pub const PLACEMENT_POLICY: &str = "left_to_right_jitter_non_overlapping";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn records_bytes(samples: &[ComposedSample]) -> Result<Vec<u8>> {
    let (h, w, c) = samples.first().map(|s| s.image.shape()).unwrap_or((0, 0, 0));
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [samples.len(), h, w, c] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in samples {
        if s.image.shape() != (h, w, c) {
            return Err(Error::Shape("all records must share one image shape".into()));
        }
        if s.digit_scales.len() != s.placements.len() || s.sources.len() != s.placements.len() {
            return Err(Error::Structural(format!("record {} has ragged digit metadata", s.id)));
        }
        out.extend_from_slice(&s.id.to_le_bytes());
        out.extend_from_slice(&s.label.to_le_bytes());
        out.extend_from_slice(&(s.digit_scales.len() as u32).to_le_bytes());
        for ((sc, b), src) in s.digit_scales.iter().zip(&s.placements).zip(&s.sources) {
            out.extend_from_slice(&sc.to_le_bytes());
            for v in [b.x, b.y, b.w, b.h] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            out.extend_from_slice(&src.to_le_bytes());
        }
        out.extend_from_slice(&s.variant_of.map_or(-1i64, |v| v as i64).to_le_bytes());
        let warp = s.gt_warp.as_ref().map(Warp2d::to_json).unwrap_or_default();
        out.extend_from_slice(&(warp.len() as u32).to_le_bytes());
        out.extend_from_slice(warp.as_bytes());
        for v in s.image.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Parse {
            offset: self.pos,
            message: format!("records truncated: need {n} bytes"),
        })?;
        self.pos += n;
        Ok(s)
    }

    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.arr()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
}

pub fn parse_records(bytes: &[u8]) -> Result<Vec<ComposedSample>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "not an MCDS records file".into(),
        });
    }
    let version = u16::from_le_bytes(r.arr()?);
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported records version {version}"),
        });
    }
    let (count, h, w, c) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id = r.u64()?;
        let label = r.u32()? as u32;
        let d = r.u32()?;
        let (mut scales, mut boxes, mut sources) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..d {
            scales.push(f64::from_le_bytes(r.arr()?));
            boxes.push(GlyphBox {
                x: r.u32()?,
                y: r.u32()?,
                w: r.u32()?,
                h: r.u32()?,
            });
            sources.push(r.u64()?);
        }
        let variant_of = i64::from_le_bytes(r.arr()?);
        let wlen = r.u32()?;
        let at = r.pos;
        let wbytes = r.take(wlen)?;
        let gt_warp = if wlen == 0 {
            None
        } else {
            let s = std::str::from_utf8(wbytes).map_err(|_| Error::Parse {
                offset: at,
                message: "warp JSON is not UTF-8".into(),
            })?;
            Some(Warp2d::from_json(s)?)
        };
        let at = r.pos;
        let px = r.take(4 * h * w * c)?;
        let data: Vec<f64> = px
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let image = FeatureMap::from_vec(h, w, c, data).map_err(|e| Error::Parse {
            offset: at,
            message: e.to_string(),
        })?;
        out.push(ComposedSample {
            id,
            image,
            label,
            digit_scales: scales,
            placements: boxes,
            sources,
            variant_of: (variant_of >= 0).then_some(variant_of as u64),
            gt_warp,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: "trailing bytes after last record".into(),
        });
    }
    Ok(out)
}

/// Writes one records file per split plus `manifest.json` into `dir`.
pub fn write_dataset(
    dir: &Path,
    compose: &ComposeConfig,
    seed: u64,
    source: SourceKind,
    splits: &[(&str, Split, &[ComposedSample])],
) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, source_split, samples) in splits {
        let bytes = records_bytes(samples)?;
        let file = format!("{name}.mcds");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(SplitEntry {
            name: name.to_string(),
            source_split: *source_split,
            count: samples.len(),
            file,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = DatasetManifest {
        compose: compose.clone(),
        seed,
        source,
        placement: PLACEMENT_POLICY.into(),
        splits: entries,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&s)?)
}

/// Reads split `name`, verifying its checksum and record count.
pub fn read_dataset(dir: &Path, name: &str) -> Result<(DatasetManifest, Vec<ComposedSample>)> {
    let manifest = read_manifest(dir)?;
    let entry = manifest.split(name)?;
    let path = dir.join(&entry.file);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let digest = sha256_hex(&bytes);
    if digest != entry.sha256 {
        return Err(Error::Integrity(format!(
            "{} checksum {digest} does not match manifest {}",
            entry.file, entry.sha256
        )));
    }
    let samples = parse_records(&bytes)?;
    if samples.len() != entry.count {
        return Err(Error::Integrity(format!(
            "manifest lists {} records, file holds {}",
            entry.count,
            samples.len()
        )));
    }
    Ok((manifest, samples))
}
