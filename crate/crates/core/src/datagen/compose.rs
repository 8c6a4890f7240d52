use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::glyphs::{crop, ink_box, resize, seven_segment};
use super::idx::{read_idx, IdxData};
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::rng::stream_rng;
use crate::sampling::apply_warp;
use crate::warp::{Warp2d, WarpSampler};

/// Axis-aligned box in canvas pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlyphBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposedSample {
    pub id: u64,
    pub image: FeatureMap,
    pub label: u32,
    /// Realized glyph-box height over the glyph height, per digit.
    pub digit_scales: Vec<f64>,
    pub placements: Vec<GlyphBox>,
    /// Source digit indices (global across splits).
    pub sources: Vec<u64>,
    pub variant_of: Option<u64>,
    pub gt_warp: Option<Warp2d>,
}

impl ComposedSample {
    /// Mean of the per-digit scales; the sample's dominant scale.
    pub fn scale(&self) -> f64 {
        self.digit_scales.iter().sum::<f64>() / self.digit_scales.len().max(1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Mnist,
    SevenSegment,
}

/// Procedural glyph pool sizes, matching the MNIST splits.
const PROCEDURAL_TRAIN: usize = 60_000;
const PROCEDURAL_TEST: usize = 10_000;
const TEST_INDEX_OFFSET: u64 = 1 << 32;

/// Cropped digit glyphs for one split.
pub struct DigitSource {
    pub kind: SourceKind,
    pub split: Split,
    mnist: Option<(Vec<FeatureMap>, Vec<u8>)>,
}

impl DigitSource {
    /// MNIST from `dir` when its IDX files exist, otherwise the procedural
    /// seven-segment pool.
    pub fn open(dir: Option<&Path>, split: Split) -> Result<Self> {
        let names = match split {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        };
        if let Some(d) = dir {
            let (ip, lp) = (d.join(names.0), d.join(names.1));
            if ip.exists() && lp.exists() {
                return Self::from_idx(read_idx(&ip)?, read_idx(&lp)?, split);
            }
        }
        Ok(Self::procedural(split))
    }

    pub fn procedural(split: Split) -> Self {
        Self {
            kind: SourceKind::SevenSegment,
            split,
            mnist: None,
        }
    }

    pub fn from_idx(images: IdxData, labels: IdxData, split: Split) -> Result<Self> {
        let (
            IdxData::Images {
                count,
                rows,
                cols,
                pixels,
            },
            IdxData::Labels(labels),
        ) = (images, labels)
        else {
            return Err(Error::Usage("expected an IDX image file and a label file".into()));
        };
        if count != labels.len() {
            return Err(Error::Integrity(format!("{count} images but {} labels", labels.len())));
        }
        let imgs = pixels
            .chunks(rows * cols)
            .map(|p| {
                FeatureMap::from_vec(rows, cols, 1, p.iter().map(|&v| v as f64 / 255.0).collect()).expect("sized chunk")
            })
            .collect();
        Ok(Self {
            kind: SourceKind::Mnist,
            split,
            mnist: Some((imgs, labels)),
        })
    }

    pub fn len(&self) -> usize {
        match (&self.mnist, self.split) {
            (Some((i, _)), _) => i.len(),
            (None, Split::Train) => PROCEDURAL_TRAIN,
            (None, Split::Test) => PROCEDURAL_TEST,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global index of local entry `i`; test indices are offset past all train
    /// indices.
    pub fn global_index(&self, i: usize) -> u64 {
        match self.split {
            Split::Train => i as u64,
            Split::Test => TEST_INDEX_OFFSET + i as u64,
        }
    }

    /// Label and ink-cropped glyph of entry `i`.
    pub fn glyph(&self, i: usize) -> Result<(u8, FeatureMap)> {
        let (label, img) = match &self.mnist {
            Some((imgs, labels)) => (labels[i], imgs[i].clone()),
            None => {
                let g = self.global_index(i);
                let d = (g % 10) as u8;
                (d, seven_segment(d, g))
            }
        };
        let (t, l, h, w) = ink_box(&img).ok_or_else(|| Error::Generation(format!("source digit {i} is blank")))?;
        Ok((label, crop(&img, t, l, h, w)))
    }
}

/// Composition parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComposeConfig {
    pub canvas: usize,
    pub digits: usize,
    pub scale_range: (f64, f64),
    /// Glyph-box height in pixels at scale 1.
    pub glyph_height: usize,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            canvas: 64,
            digits: 2,
            scale_range: (0.4, 2.0),
            glyph_height: 16,
        }
    }
}

impl ComposeConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if self.digits == 0 || self.digits > 9 || self.canvas == 0 || self.glyph_height == 0 {
            return Err(Error::Usage(
                "digits, canvas and glyph_height must be positive (digits ≤ 9)".into(),
            ));
        }
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Usage(format!("bad scale range {:?}", self.scale_range)));
        }
        if (hi * self.glyph_height as f64).round() as usize > self.canvas {
            return Err(Error::Usage("largest glyph exceeds the canvas".into()));
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        10usize.pow(self.digits as u32)
    }
}

const PLACEMENT_RETRIES: usize = 100;

/// Resizes each glyph to its scale and places them left to right with
/// random jitter and no overlap. Label is the decimal concatenation.
pub fn compose_sample<R: Rng>(
    glyphs: &[(u8, FeatureMap)],
    scales: &[f64],
    cfg: &ComposeConfig,
    rng: &mut R,
) -> Result<ComposedSample> {
    if glyphs.len() != scales.len() || glyphs.is_empty() {
        return Err(Error::Usage("one scale per glyph required".into()));
    }
    let (lo, hi) = cfg.scale_range;
    let mut sized = Vec::with_capacity(glyphs.len());
    let mut realized = Vec::with_capacity(glyphs.len());
    for ((_, g), &s) in glyphs.iter().zip(scales) {
        if !(lo..=hi).contains(&s) {
            return Err(Error::Usage(format!("scale {s} outside {:?}", cfg.scale_range)));
        }
        let h = ((s * cfg.glyph_height as f64).round() as usize).max(1);
        let w = ((h as f64 * g.width() as f64 / g.height() as f64).round() as usize).max(1);
        realized.push(h as f64 / cfg.glyph_height as f64);
        sized.push(resize(g, h, w));
    }
    let n = cfg.canvas;
    let mut boxes = None;
    for _ in 0..PLACEMENT_RETRIES {
        let mut cand = Vec::with_capacity(sized.len());
        for g in &sized {
            if g.width() > n || g.height() > n {
                break;
            }
            cand.push(GlyphBox {
                x: rng.random_range(0..=n - g.width()),
                y: rng.random_range(0..=n - g.height()),
                w: g.width(),
                h: g.height(),
            });
        }
        if cand.len() == sized.len() && cand.windows(2).all(|p| p[0].x + p[0].w < p[1].x) {
            boxes = Some(cand);
            break;
        }
    }
    let boxes = boxes
        .ok_or_else(|| Error::Generation(format!("no non-overlapping placement after {PLACEMENT_RETRIES} tries")))?;
    let mut image = FeatureMap::zeros(n, n, 1);
    for (g, b) in sized.iter().zip(&boxes) {
        for i in 0..b.h {
            for j in 0..b.w {
                image.set(b.y + i, b.x + j, 0, g.get(i, j, 0).clamp(0.0, 1.0));
            }
        }
    }
    image.quantize_f32();
    let label = glyphs.iter().fold(0u32, |acc, (d, _)| acc * 10 + *d as u32);
    Ok(ComposedSample {
        id: 0,
        image,
        label,
        digit_scales: realized,
        placements: boxes,
        sources: Vec::new(),
        variant_of: None,
        gt_warp: None,
    })
}

/// Attempts per sample before giving up on a seed.
const SAMPLE_RETRIES: usize = 100;

/// Sample `index` of a split: a pure function of `(source, cfg, seed, index)`.
pub fn generate_sample(source: &DigitSource, cfg: &ComposeConfig, seed: u64, index: usize) -> Result<ComposedSample> {
    let stream = match source.split {
        Split::Train => 0,
        Split::Test => 1 << 40,
    } + index as u64;
    let mut rng = stream_rng(seed, stream);
    let mut last = None;
    for _ in 0..SAMPLE_RETRIES {
        let picks: Vec<usize> = (0..cfg.digits).map(|_| rng.random_range(0..source.len())).collect();
        let glyphs = picks.iter().map(|&i| source.glyph(i)).collect::<Result<Vec<_>>>()?;
        let scales: Vec<f64> = (0..cfg.digits)
            .map(|_| rng.random_range(cfg.scale_range.0..=cfg.scale_range.1))
            .collect();
        match compose_sample(&glyphs, &scales, cfg, &mut rng) {
            Ok(mut s) => {
                s.id = index as u64;
                s.sources = picks.iter().map(|&i| source.global_index(i)).collect();
                return Ok(s);
            }
            Err(e @ Error::Generation(_)) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// `count` samples generated in parallel, ordered by index.
pub fn generate_split(
    source: &DigitSource,
    cfg: &ComposeConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<ComposedSample>> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| generate_sample(source, cfg, seed, i))
        .collect()
}

/// `k` warped copies of `sample` carrying their ground-truth warps.
pub fn make_variants(sample: &ComposedSample, sampler: &WarpSampler, k: usize, seed: u64) -> Vec<ComposedSample> {
    let mut rng = stream_rng(seed, sample.id);
    (0..k)
        .map(|_| {
            let w = sampler.sample_2d_with(&mut rng);
            let mut image = apply_warp(&sample.image, &w);
            image.quantize_f32();
            ComposedSample {
                image,
                variant_of: Some(sample.id),
                gt_warp: Some(w),
                ..sample.clone()
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_is_decimal_concatenation() {
        let src = DigitSource::procedural(Split::Train);
        let glyphs: Vec<_> = [5usize, 4, 9].iter().map(|&d| src.glyph(d).unwrap()).collect();
        let cfg = ComposeConfig {
            canvas: 96,
            digits: 3,
            scale_range: (0.4, 2.0),
            glyph_height: 16,
        };
        let s = compose_sample(&glyphs, &[1.0, 1.0, 1.0], &cfg, &mut stream_rng(0, 0)).unwrap();
        assert_eq!(s.label, 549);
    }

    #[test]
    fn unit_scale_box_height() {
        let src = DigitSource::procedural(Split::Test);
        let cfg = ComposeConfig {
            canvas: 64,
            digits: 1,
            scale_range: (0.4, 2.0),
            glyph_height: 28,
        };
        let g = src.glyph(3).unwrap();
        let s = compose_sample(&[g], &[1.0], &cfg, &mut stream_rng(1, 0)).unwrap();
        let (_, _, h, _) = ink_box(&s.image).unwrap();
        assert!((h as i64 - 28).abs() <= 1);
    }

    #[test]
    fn extreme_scale_ratio() {
        let src = DigitSource::procedural(Split::Train);
        let cfg = ComposeConfig::default();
        let g: Vec<_> = [0usize, 8].iter().map(|&d| src.glyph(d).unwrap()).collect();
        let s = compose_sample(&g, &[0.4, 2.0], &cfg, &mut stream_rng(2, 0)).unwrap();
        let hs: Vec<usize> = s.placements.iter().map(|b| b.h).collect();
        let ratio = hs[1] as f64 / hs[0] as f64;
        assert!((ratio / 5.0 - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn infeasible_placement_is_a_generation_error() {
        let src = DigitSource::procedural(Split::Train);
        let cfg = ComposeConfig {
            canvas: 34,
            digits: 2,
            scale_range: (0.4, 2.0),
            glyph_height: 16,
        };
        let g: Vec<_> = [0usize, 8].iter().map(|&d| src.glyph(d).unwrap()).collect();
        let r = compose_sample(&g, &[2.0, 2.0], &cfg, &mut stream_rng(0, 0));
        assert!(matches!(r, Err(Error::Generation(_))));
    }

    #[test]
    fn identity_variants_equal_original() {
        let src = DigitSource::procedural(Split::Train);
        let s = generate_sample(&src, &ComposeConfig::default(), 3, 0).unwrap();
        let v = make_variants(&s, &WarpSampler::identity_only(4), 3, 0);
        assert_eq!(v.len(), 3);
        for x in v {
            assert_eq!(x.image, s.image);
            assert_eq!(x.label, s.label);
        }
    }
}
