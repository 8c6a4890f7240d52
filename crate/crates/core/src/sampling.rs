//! Differentiable application of monotone warps to feature maps.
//!
//! `apply_warp` computes `S(f; l)(p) = f(l^{-1}(p))` and `apply_warp_inverse`
//! computes `S^{-1}(f; l)(p) = f(l(p))`, both with bilinear sampling and edge
//! clamping. The same normalized-domain warp applies at any resolution.

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::warp::{Direction, Warp2d};

/// Sample coordinates within this many pixels of a pixel centre snap onto it,
/// so that identity warps reproduce their input bit for bit.
const SNAP_TOL: f64 = 1e-9;

/// Gradients of a warped map with respect to the source pixels and to the
/// flat parameter vector of the warp (see [`Warp2d::params`]).
#[derive(Debug, Clone)]
pub struct WarpGradients {
    pub d_pixels: FeatureMap,
    pub d_warp_values: Vec<f64>,
}

/// Bilinear taps for one output pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tap {
    /// Pixel indices (row-major, without channel) of the four neighbours
    /// `00, 01, 10, 11` (first digit = row offset).
    pub idx: [usize; 4],
    pub weight: [f64; 4],
    /// d value / d sample-x (normalized units) coefficients per neighbour.
    pub grad_x: [f64; 4],
    /// d value / d sample-y (normalized units) coefficients per neighbour.
    pub grad_y: [f64; 4],
    /// Mixed second derivative d2 value / dx dy coefficients per neighbour.
    pub cross: [f64; 4],
    pub dqx: [(usize, f64); 4],
    pub dqy: [(usize, f64); 4],
}

/// Sampling pattern of a warp on an `H x W` pixel grid.
#[derive(Debug, Clone)]
pub(crate) struct SampleGrid {
    pub height: usize,
    pub width: usize,
    pub taps: Vec<Tap>,
}

fn axis(p: f64, n: usize) -> (usize, f64, f64) {
    // (lower index, fraction, d fraction / d p); clamped samples have zero slope
    if n == 1 || p <= 0.0 {
        return (0, 0.0, 0.0);
    }
    let last = (n - 1) as f64;
    if p >= last {
        return (n - 2, 1.0, 0.0);
    }
    let mut lo = p.floor();
    let mut frac = p - lo;
    if frac < SNAP_TOL {
        frac = 0.0;
    } else if 1.0 - frac < SNAP_TOL {
        lo += 1.0;
        frac = 0.0;
    }
    let mut lo = lo as usize;
    if lo >= n - 1 {
        lo = n - 2;
        frac = 1.0;
    }
    (lo, frac, 1.0)
}

impl SampleGrid {
    pub fn build(warp: &Warp2d, dir: Direction, height: usize, width: usize) -> Self {
        let mut taps = Vec::with_capacity(height * width);
        let (hf, wf) = (height as f64, width as f64);
        for i in 0..height {
            let y = (i as f64 + 0.5) / hf;
            for j in 0..width {
                let x = (j as f64 + 0.5) / wf;
                let e = warp.eval_with_grads(x, y, dir);
                let (x0, a, sx) = axis(e.x * wf - 0.5, width);
                let (y0, b, sy) = axis(e.y * hf - 0.5, height);
                let x1 = (x0 + 1).min(width - 1);
                let y1 = (y0 + 1).min(height - 1);
                // chain to normalized coordinates: dp/dq = W (resp. H)
                let gx = sx * wf;
                let gy = sy * hf;
                taps.push(Tap {
                    idx: [y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1],
                    weight: [(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b],
                    grad_x: [-(1.0 - b) * gx, (1.0 - b) * gx, -b * gx, b * gx],
                    grad_y: [-(1.0 - a) * gy, -a * gy, (1.0 - a) * gy, a * gy],
                    cross: [gx * gy, -gx * gy, -gx * gy, gx * gy],
                    dqx: e.dx,
                    dqy: e.dy,
                });
            }
        }
        Self { height, width, taps }
    }

    pub fn sample(&self, f: &FeatureMap) -> FeatureMap {
        let c = f.channels();
        let src = f.data();
        let mut out = FeatureMap::zeros(self.height, self.width, c);
        let dst = out.data_mut();
        for (p, t) in self.taps.iter().enumerate() {
            let o = &mut dst[p * c..(p + 1) * c];
            for k in 0..4 {
                let wgt = t.weight[k];
                if wgt == 0.0 {
                    continue;
                }
                let s = &src[t.idx[k] * c..(t.idx[k] + 1) * c];
                for (ov, sv) in o.iter_mut().zip(s) {
                    *ov += wgt * sv;
                }
            }
        }
        out
    }

    /// Accumulates gradients for `upstream` (shaped like the output).
    pub fn backward(&self, f: &FeatureMap, upstream: &FeatureMap, n_params: usize, want_pixels: bool) -> WarpGradients {
        let c = f.channels();
        let src = f.data();
        let up = upstream.data();
        let mut d_pixels = FeatureMap::zeros(f.height(), f.width(), c);
        let mut d_warp = vec![0.0; n_params];
        {
            let dp = d_pixels.data_mut();
            for (p, t) in self.taps.iter().enumerate() {
                let u = &up[p * c..(p + 1) * c];
                let mut dvx = 0.0;
                let mut dvy = 0.0;
                for k in 0..4 {
                    let s = &src[t.idx[k] * c..(t.idx[k] + 1) * c];
                    let dot: f64 = u.iter().zip(s).map(|(a, b)| a * b).sum();
                    dvx += t.grad_x[k] * dot;
                    dvy += t.grad_y[k] * dot;
                    if want_pixels && t.weight[k] != 0.0 {
                        let d = &mut dp[t.idx[k] * c..(t.idx[k] + 1) * c];
                        for (dv, uv) in d.iter_mut().zip(u) {
                            *dv += t.weight[k] * uv;
                        }
                    }
                }
                for &(k, d) in &t.dqx {
                    d_warp[k] += dvx * d;
                }
                for &(k, d) in &t.dqy {
                    d_warp[k] += dvy * d;
                }
            }
        }
        WarpGradients {
            d_pixels,
            d_warp_values: d_warp,
        }
    }
}

fn resample(f: &FeatureMap, w: &Warp2d, dir: Direction) -> FeatureMap {
    SampleGrid::build(w, dir, f.height(), f.width()).sample(f)
}

/// `S(f; l)`: the output at `p` is `f(l^{-1}(p))`, using the row/column-wise
/// inverse of `w`. Channels are warped identically.
pub fn apply_warp(f: &FeatureMap, w: &Warp2d) -> FeatureMap {
    resample(f, w, Direction::Inverse)
}

/// `S^{-1}(f; l)`: the output at `p` is `f(l(p))`. Equal to
/// `apply_warp(f, &w.inverse())`.
pub fn apply_warp_inverse(f: &FeatureMap, w: &Warp2d) -> FeatureMap {
    resample(f, w, Direction::Forward)
}

fn check_upstream(f: &FeatureMap, upstream: &FeatureMap) -> Result<()> {
    if !f.same_shape(upstream) {
        return Err(Error::Shape(format!(
            "upstream {:?} does not match source {:?}",
            upstream.shape(),
            f.shape()
        )));
    }
    Ok(())
}

/// Gradients of `apply_warp(f, w)` contracted with `upstream`.
pub fn warp_backward(f: &FeatureMap, w: &Warp2d, upstream: &FeatureMap) -> Result<WarpGradients> {
    check_upstream(f, upstream)?;
    Ok(SampleGrid::build(w, Direction::Inverse, f.height(), f.width()).backward(f, upstream, w.param_count(), true))
}

/// Gradients of `apply_warp_inverse(f, w)` contracted with `upstream`.
pub fn warp_inverse_backward(f: &FeatureMap, w: &Warp2d, upstream: &FeatureMap) -> Result<WarpGradients> {
    check_upstream(f, upstream)?;
    Ok(SampleGrid::build(w, Direction::Forward, f.height(), f.width()).backward(f, upstream, w.param_count(), true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::{PiecewiseMonotone1d, WarpSampler};

    fn smooth(h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, |x, y| {
            0.5 + 0.3 * (6.0 * x).sin() * (4.0 * y + 0.3).cos() + 0.1 * (9.0 * x * y).sin()
        })
    }

    #[test]
    fn identity_is_exact() {
        let f = smooth(13, 17);
        for n in [2, 3, 4, 7] {
            let id = Warp2d::identity(n, n);
            assert_eq!(apply_warp(&f, &id), f);
            assert_eq!(apply_warp_inverse(&f, &id), f);
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let f = FeatureMap::filled(9, 11, 3, 0.7);
        let w = WarpSampler::default().sample_2d(4);
        let g = apply_warp(&f, &w);
        assert!(g.max_abs_diff(&f) < 1e-15);
        let up = FeatureMap::filled(9, 11, 3, 1.0);
        let grads = warp_backward(&f, &w, &up).unwrap();
        assert!(grads.d_warp_values.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn identity_backward_passes_upstream() {
        let f = smooth(6, 6);
        let up = FeatureMap::filled(6, 6, 1, 1.0);
        let g = warp_backward(&f, &Warp2d::identity(4, 4), &up).unwrap();
        assert_eq!(g.d_pixels, up);
    }

    #[test]
    fn linear_in_pixels() {
        let f = smooth(10, 12);
        let g = f.map(|v| v * v - 0.2);
        let w = WarpSampler::default().sample_2d(11);
        let mut comb = f.clone();
        comb.add_scaled(&g, 0.5);
        let lhs = apply_warp(&comb, &w);
        let mut rhs = apply_warp(&f, &w);
        rhs.add_scaled(&apply_warp(&g, &w), 0.5);
        assert!(lhs.max_abs_diff(&rhs) < 1e-14);
    }

    #[test]
    fn separable_shift_moves_samples() {
        // compressing the left half shifts content towards the left
        let fx = PiecewiseMonotone1d::uniform(vec![0.0, 0.3, 1.0]).unwrap();
        let w = Warp2d::separable(&fx, &PiecewiseMonotone1d::identity(2), 2, 2);
        let f = FeatureMap::from_fn(4, 40, |x, _| x);
        let g = apply_warp(&f, &w);
        // g(p) = f(l^{-1}(p)) = l^{-1}(x) which exceeds x on the left half
        assert!(g.get(0, 5, 0) > f.get(0, 5, 0));
    }
}
