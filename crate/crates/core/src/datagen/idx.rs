use std::path::Path;

use crate::error::{Error, Result};
use IdxData::Images;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxData {
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse {
            offset,
            message: "truncated IDX header".into(),
        })
}

/// Parses a big-endian IDX file holding u8 images or labels.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let count = be_u32(bytes, 4)? as usize;
    let (header, item) = match magic {
        IMAGES_MAGIC => {
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            (16, rows * cols)
        }
        LABELS_MAGIC => (8, 1),
        m => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unknown IDX magic {m:#010x}"),
            })
        }
    };
    let need = count.saturating_mul(item).saturating_add(header);
    if bytes.len() < need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("IDX payload truncated: header promises {need} bytes"),
        });
    }
    if bytes.len() > need {
        return Err(Error::Parse {
            offset: need,
            message: "trailing bytes after IDX payload".into(),
        });
    }
    let payload = bytes[header..].to_vec();
    Ok(if magic == IMAGES_MAGIC {
        Images {
            count,
            rows: be_u32(bytes, 8)? as usize,
            cols: be_u32(bytes, 12)? as usize,
            pixels: payload,
        }
    } else {
        if let Some(p) = payload.iter().position(|&l| l > 9) {
            return Err(Error::Parse {
                offset: header + p,
                message: format!("label {} outside 0..9", payload[p]),
            });
        }
        IdxData::Labels(payload)
    })
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

/// Serializes in IDX format; the inverse of [`parse_idx`].
pub fn idx_bytes(data: &IdxData) -> Vec<u8> {
    let mut out = Vec::new();
    match data {
        Images {
            count,
            rows,
            cols,
            pixels,
        } => {
            for v in [IMAGES_MAGIC, *count as u32, *rows as u32, *cols as u32] {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out.extend_from_slice(pixels);
        }
        IdxData::Labels(l) => {
            out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
            out.extend_from_slice(&(l.len() as u32).to_be_bytes());
            out.extend_from_slice(l);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_counts() {
        let img = Images {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: (0..12).collect(),
        };
        assert_eq!(parse_idx(&idx_bytes(&img)).unwrap(), img);
        let lab = IdxData::Labels(vec![0, 9, 4]);
        assert_eq!(parse_idx(&idx_bytes(&lab)).unwrap(), lab);
    }

    #[test]
    fn corruption_is_reported_with_offset() {
        let img = Images {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: (0..12).collect(),
        };
        let b = idx_bytes(&img);
        match parse_idx(&b[..20]) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_idx(&b[..6]), Err(Error::Parse { offset: 4, .. })));
        let mut bad = b.clone();
        bad[3] = 0x05;
        assert!(matches!(parse_idx(&bad), Err(Error::Parse { offset: 0, .. })));
        let bad_label = idx_bytes(&IdxData::Labels(vec![1, 12]));
        assert!(matches!(parse_idx(&bad_label), Err(Error::Parse { offset: 9, .. })));
    }
}
