//! Dense `H x W x C` feature maps on the unit square and 8-bit PNM I/O.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major `H x W x C` grid of reals. Pixel `(i, j)` sits at the normalized
/// coordinate `((j + 0.5) / W, (i + 0.5) / H)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape("feature map dimensions must be positive".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} map needs {} values, got {}",
                height,
                width,
                channels,
                height * width * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite entry {bad}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a single-channel map from a function of normalized coordinates.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut m = Self::zeros(height, width, 1);
        for i in 0..height {
            for j in 0..width {
                let x = (j as f64 + 0.5) / width as f64;
                let y = (i as f64 + 0.5) / height as f64;
                m.data[i * width + j] = f(x, y);
            }
        }
        m
    }

    /// Reinterprets the buffer under a new shape with the same length.
    pub fn reshape(self, height: usize, width: usize, channels: usize) -> Result<Self> {
        if height * width * channels != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {} values to {height}x{width}x{channels}",
                self.data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data: self.data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.width + j) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[self.index(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        let k = self.index(i, j, c);
        self.data[k] = v;
    }

    /// All channel values of pixel `(i, j)`.
    #[inline]
    pub fn pixel(&self, i: usize, j: usize) -> &[f64] {
        let k = self.index(i, j, 0);
        &self.data[k..k + self.channels]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    /// Mean over elements of the squared difference.
    pub fn mean_sq_diff(&self, other: &Self) -> f64 {
        debug_assert!(self.same_shape(other));
        let s: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        s / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rounds every entry to the nearest `f32`.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Writes a binary PGM (1 channel) or PPM (3 channels); values are
    /// clamped to `[0, 1]` and scaled to 8 bits.
    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Usage(format!("cannot write {c}-channel image as PNM"))),
        };
        let mut bytes = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read_pnm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        parse_pnm(&bytes)
    }
}

fn parse_pnm(bytes: &[u8]) -> Result<FeatureMap> {
    let mut pos = 0;
    let token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::Parse {
                offset: start,
                message: "unexpected end of PNM header".into(),
            });
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => {
            return Err(Error::Parse {
                offset: 0,
                message: format!("unsupported PNM magic {magic}"),
            })
        }
    };
    let num = |pos: &mut usize| -> Result<usize> {
        let at = *pos;
        token(pos)?.parse().map_err(|_| Error::Parse {
            offset: at,
            message: "bad PNM header number".into(),
        })
    };
    let width = num(&mut pos)?;
    let height = num(&mut pos)?;
    let maxval = num(&mut pos)?;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: pos,
            message: format!("only 8-bit PNM supported (maxval {maxval})"),
        });
    }
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("truncated PNM payload: need {need} bytes"),
        });
    }
    let data = bytes[pos..pos + need].iter().map(|&b| b as f64 / 255.0).collect();
    FeatureMap::from_vec(height, width, channels, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(FeatureMap::from_vec(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(FeatureMap::from_vec(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn pnm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = FeatureMap::from_fn(5, 7, |x, y| (x * y * 255.0).round() / 255.0);
        let p = dir.path().join("a.pgm");
        m.write_pnm(&p).unwrap();
        let back = FeatureMap::read_pnm(&p).unwrap();
        assert!(back.max_abs_diff(&m) < 1e-12);
        let rgb = FeatureMap::filled(3, 4, 3, 1.0);
        let p = dir.path().join("b.ppm");
        rgb.write_pnm(&p).unwrap();
        assert_eq!(FeatureMap::read_pnm(&p).unwrap(), rgb);
    }
}
