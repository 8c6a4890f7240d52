//! Binary checkpoints: `"MCAN"`, `u16` version, `u32` layer count, input
//! shape (`3 x u32`), a per-layer shape table, then every parameter as a
//! little-endian `f64`.

use std::path::Path;

use super::{LayerSpec, Sequential};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MCAN";
const VERSION: u16 = 1;

fn encode_spec(s: &LayerSpec) -> (u8, [u32; 5]) {
    match *s {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        } => (
            0,
            [in_ch as u32, out_ch as u32, kernel as u32, stride as u32, pad as u32],
        ),
        LayerSpec::Relu => (1, [0; 5]),
        LayerSpec::AdaptiveAvgPool { out_h, out_w } => (2, [out_h as u32, out_w as u32, 0, 0, 0]),
        LayerSpec::Dense { inputs, outputs } => (3, [inputs as u32, outputs as u32, 0, 0, 0]),
        LayerSpec::Flatten => (4, [0; 5]),
    }
}

fn decode_spec(kind: u8, a: [u32; 5], offset: usize) -> Result<LayerSpec> {
    let a = a.map(|v| v as usize);
    Ok(match kind {
        0 => LayerSpec::conv(a[0], a[1], a[2], a[3], a[4]),
        1 => LayerSpec::Relu,
        2 => LayerSpec::AdaptiveAvgPool {
            out_h: a[0],
            out_w: a[1],
        },
        3 => LayerSpec::Dense {
            inputs: a[0],
            outputs: a[1],
        },
        4 => LayerSpec::Flatten,
        k => {
            return Err(Error::Parse {
                offset,
                message: format!("unknown layer kind {k}"),
            })
        }
    })
}

pub fn checkpoint_bytes(net: &Sequential) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(net.specs().len() as u32).to_le_bytes());
    let (h, w, c) = net.input_shape();
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in net.specs() {
        let (kind, args) = encode_spec(s);
        out.push(kind);
        for a in args {
            out.extend_from_slice(&a.to_le_bytes());
        }
        out.extend_from_slice(&(s.weight_len() as u64).to_le_bytes());
        out.extend_from_slice(&(s.bias_len() as u64).to_le_bytes());
    }
    for v in net.params().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                offset: self.pos,
                message: format!("truncated checkpoint: need {n} more bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Sequential> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != VERSION {
        return Err(Error::Parse {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let n = r.u32()? as usize;
    let shape = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let mut specs = Vec::with_capacity(n);
    for _ in 0..n {
        let at = r.pos;
        let kind = r.take(1)?[0];
        let mut args = [0u32; 5];
        for a in &mut args {
            *a = r.u32()?;
        }
        let spec = decode_spec(kind, args, at)?;
        let (wl, bl) = (r.u64()? as usize, r.u64()? as usize);
        if wl != spec.weight_len() || bl != spec.bias_len() {
            return Err(Error::Parse {
                offset: at,
                message: format!("parameter counts {wl}/{bl} disagree with layer {spec:?}"),
            });
        }
        specs.push(spec);
    }
    let mut net = Sequential::new(shape, specs)?;
    let payload = r.take(8 * net.param_count())?;
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            message: "trailing bytes after checkpoint payload".into(),
        });
    }
    net.set_params(&values)?;
    Ok(net)
}

pub fn save_checkpoint(net: &Sequential, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Sequential> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let mut net = Sequential::new(
            (8, 8, 2),
            vec![
                LayerSpec::conv(2, 4, 3, 2, 1),
                LayerSpec::Relu,
                LayerSpec::AdaptiveAvgPool { out_h: 2, out_w: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 16, outputs: 3 },
            ],
        )
        .unwrap();
        net.init_he(5);
        let bytes = checkpoint_bytes(&net);
        let back = parse_checkpoint(&bytes).unwrap();
        assert_eq!(back.specs(), net.specs());
        assert_eq!(back.params().data(), net.params().data());
        let err = parse_checkpoint(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_checkpoint(&bad).is_err());
    }
}
