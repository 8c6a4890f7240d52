use rand::Rng;

use crate::image::FeatureMap;
use crate::rng::stream_rng;

/// Active segments `a b c d e f g` per digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// Seed stream reserved for procedural glyph styles.
const GLYPH_STREAM: u64 = 0x5e9_0000;

/// Renders a seven-segment digit on a 28-pixel-tall canvas with stroke,
/// width and slant drawn from `style_seed`. Returned uncropped.
pub fn seven_segment(digit: u8, style_seed: u64) -> FeatureMap {
    let mut rng = stream_rng(style_seed, GLYPH_STREAM);
    let h = 28.0;
    let t: f64 = rng.random_range(2.5..4.0);
    let w: f64 = rng.random_range(13.0..18.0);
    let slant: f64 = rng.random_range(-0.15..0.15);
    let on = SEGMENTS[digit as usize % 10];
    let mid = h / 2.0;
    let rects = [
        (0.0, w, 0.0, t),
        (w - t, w, 0.0, mid),
        (w - t, w, mid, h),
        (0.0, w, h - t, h),
        (0.0, t, mid, h),
        (0.0, t, 0.0, mid),
        (0.0, w, mid - t / 2.0, mid + t / 2.0),
    ];
    let margin = (slant.abs() * h).ceil() + 2.0;
    let cw = (w + 2.0 * margin).ceil() as usize;
    let ch = 28;
    let ss = 4;
    let mut out = FeatureMap::zeros(ch, cw, 1);
    for i in 0..ch {
        for j in 0..cw {
            let mut hit = 0;
            for a in 0..ss {
                for b in 0..ss {
                    let y = i as f64 + (a as f64 + 0.5) / ss as f64;
                    let x = j as f64 + (b as f64 + 0.5) / ss as f64 - margin - slant * (h - y);
                    if rects
                        .iter()
                        .zip(on)
                        .any(|(&(x0, x1, y0, y1), o)| o && x >= x0 && x < x1 && y >= y0 && y < y1)
                    {
                        hit += 1;
                    }
                }
            }
            out.set(i, j, 0, hit as f64 / (ss * ss) as f64);
        }
    }
    out
}

/// Bounding box `(top, left, height, width)` of strictly positive pixels.
pub fn ink_box(img: &FeatureMap) -> Option<(usize, usize, usize, usize)> {
    let (mut t, mut l, mut b, mut r) = (usize::MAX, usize::MAX, 0, 0);
    for i in 0..img.height() {
        for j in 0..img.width() {
            if img.pixel(i, j).iter().any(|&v| v > 0.0) {
                t = t.min(i);
                l = l.min(j);
                b = b.max(i);
                r = r.max(j);
            }
        }
    }
    (t != usize::MAX).then(|| (t, l, b - t + 1, r - l + 1))
}

pub fn crop(img: &FeatureMap, top: usize, left: usize, h: usize, w: usize) -> FeatureMap {
    let c = img.channels();
    let mut out = FeatureMap::zeros(h, w, c);
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                out.set(i, j, k, img.get(top + i, left + j, k));
            }
        }
    }
    out
}

fn axis_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let s = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|i| {
            if n_in > n_out {
                let (a, b) = (i as f64 * s, (i + 1) as f64 * s);
                let mut w = Vec::new();
                let mut j = a.floor() as usize;
                while (j as f64) < b && j < n_in {
                    let ov = (b.min(j as f64 + 1.0) - a.max(j as f64)).max(0.0);
                    if ov > 0.0 {
                        w.push((j, ov / s));
                    }
                    j += 1;
                }
                w
            } else {
                let c = ((i as f64 + 0.5) * s - 0.5).clamp(0.0, (n_in - 1) as f64);
                let j = (c.floor() as usize).min(n_in - 1);
                let f = c - j as f64;
                if f > 0.0 && j + 1 < n_in {
                    vec![(j, 1.0 - f), (j + 1, f)]
                } else {
                    vec![(j, 1.0)]
                }
            }
        })
        .collect()
}

/// Separable resize: bilinear when enlarging an axis, area averaging when
/// shrinking it. Every input pixel contributes to some output pixel, so the
/// ink box of the output spans the full output.
pub fn resize(img: &FeatureMap, h: usize, w: usize) -> FeatureMap {
    let c = img.channels();
    let wy = axis_weights(img.height(), h);
    let wx = axis_weights(img.width(), w);
    let mut rows = FeatureMap::zeros(h, img.width(), c);
    for (i, ws) in wy.iter().enumerate() {
        for j in 0..img.width() {
            for k in 0..c {
                let v = ws.iter().map(|&(s, a)| a * img.get(s, j, k)).sum();
                rows.set(i, j, k, v);
            }
        }
    }
    let mut out = FeatureMap::zeros(h, w, c);
    for i in 0..h {
        for (j, ws) in wx.iter().enumerate() {
            for k in 0..c {
                let v = ws.iter().map(|&(s, a)| a * rows.get(i, s, k)).sum();
                out.set(i, j, k, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_glyphs_are_distinct_and_bounded() {
        let imgs: Vec<_> = (0..10).map(|d| seven_segment(d, 5)).collect();
        for (d, g) in imgs.iter().enumerate() {
            let (_, _, h, _) = ink_box(g).unwrap();
            assert_eq!(h, 28, "digit {d}");
            assert!(g.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_ne!(imgs[1].data(), imgs[7].data());
        assert_eq!(seven_segment(3, 9).data(), seven_segment(3, 9).data());
    }

    #[test]
    fn resize_preserves_constant_and_box() {
        let g = FeatureMap::filled(20, 12, 1, 0.7);
        for (h, w) in [(6, 4), (40, 30), (20, 12), (9, 25)] {
            let r = resize(&g, h, w);
            assert!(r.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        }
        let glyph = seven_segment(2, 1);
        let (t, l, h, w) = ink_box(&glyph).unwrap();
        let c = crop(&glyph, t, l, h, w);
        for th in [6, 11, 28, 32, 56] {
            let r = resize(&c, th, 9);
            assert_eq!(ink_box(&r).unwrap(), (0, 0, th, 9));
        }
    }
}
