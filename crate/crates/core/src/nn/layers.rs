//! Per-layer kernels. Feature maps are HWC; conv weights are `[out][ky][kx][in]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FeatureMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    AdaptiveAvgPool {
        out_h: usize,
        out_w: usize,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Flatten,
}

pub(crate) type Shape = (usize, usize, usize);

impl LayerSpec {
    pub fn conv(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
        }
    }

    pub fn weight_len(&self) -> usize {
        match *self {
            LayerSpec::Conv {
                in_ch, out_ch, kernel, ..
            } => out_ch * kernel * kernel * in_ch,
            LayerSpec::Dense { inputs, outputs } => inputs * outputs,
            _ => 0,
        }
    }

    pub fn bias_len(&self) -> usize {
        match *self {
            LayerSpec::Conv { out_ch, .. } => out_ch,
            LayerSpec::Dense { outputs, .. } => outputs,
            _ => 0,
        }
    }

    /// Fan-in used for He initialization.
    pub(crate) fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv { in_ch, kernel, .. } => in_ch * kernel * kernel,
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }

    pub fn output_shape(&self, (h, w, c): Shape) -> Result<Shape> {
        match *self {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                if c != in_ch {
                    return Err(Error::Structural(format!("conv expects {in_ch} channels, got {c}")));
                }
                if kernel == 0 || stride == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(Error::Structural(format!(
                        "conv kernel {kernel} stride {stride} pad {pad} does not fit {h}x{w}"
                    )));
                }
                Ok((
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                    out_ch,
                ))
            }
            LayerSpec::Relu => Ok((h, w, c)),
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
                if out_h == 0 || out_w == 0 || out_h > h || out_w > w {
                    return Err(Error::Structural(format!("cannot pool {h}x{w} to {out_h}x{out_w}")));
                }
                Ok((out_h, out_w, c))
            }
            LayerSpec::Dense { inputs, outputs } => {
                if (h, w, c) != (1, 1, inputs) {
                    return Err(Error::Structural(format!(
                        "dense expects 1x1x{inputs}, got {h}x{w}x{c}"
                    )));
                }
                Ok((1, 1, outputs))
            }
            LayerSpec::Flatten => Ok((1, 1, h * w * c)),
        }
    }
}

/// Partition `[start, end)` of output cell `i` out of `n` over `len` inputs.
#[inline]
pub(crate) fn pool_range(i: usize, n: usize, len: usize) -> (usize, usize) {
    let start = (i * len) / n;
    let end = ((i + 1) * len).div_ceil(n);
    (start, end)
}

fn im2col(x: &FeatureMap, kernel: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> Vec<f64> {
    let (h, w, c) = x.shape();
    let kk = kernel * kernel * c;
    let mut cols = vec![0.0; ho * wo * kk];
    let src = x.data();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &mut cols[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let s = (iy as usize * w + ix as usize) * c;
                    let d = (ky * kernel + kx) * c;
                    row[d..d + c].copy_from_slice(&src[s..s + c]);
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], shape: Shape, kernel: usize, stride: usize, pad: usize, ho: usize, wo: usize) -> FeatureMap {
    let (h, w, c) = shape;
    let kk = kernel * kernel * c;
    let mut out = FeatureMap::zeros(h, w, c);
    let dst = out.data_mut();
    for oy in 0..ho {
        for ox in 0..wo {
            let row = &cols[(oy * wo + ox) * kk..(oy * wo + ox + 1) * kk];
            for ky in 0..kernel {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..kernel {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let d = (iy as usize * w + ix as usize) * c;
                    let s = (ky * kernel + kx) * c;
                    for (a, b) in dst[d..d + c].iter_mut().zip(&row[s..s + c]) {
                        *a += b;
                    }
                }
            }
        }
    }
    out
}

/// `c (m x n) = alpha * a (m x k) * b (k x n) + beta * c`, all row-major
/// unless strides say otherwise.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: callers pass buffers holding the full m x k, k x n and m x n
    // operands under the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass of one layer. `weight`/`bias` are empty for parameter-free
/// layers; `bias = None` drops the bias (tangent propagation).
pub(crate) fn forward(
    spec: &LayerSpec,
    weight: &[f64],
    bias: Option<&[f64]>,
    x: &FeatureMap,
    out: Shape,
    relu_mask: Option<&FeatureMap>,
) -> FeatureMap {
    match *spec {
        LayerSpec::Conv {
            out_ch,
            kernel,
            stride,
            pad,
            ..
        } => {
            let (ho, wo, _) = out;
            let kk = kernel * kernel * x.channels();
            let cols = im2col(x, kernel, stride, pad, ho, wo);
            let mut y = FeatureMap::zeros(ho, wo, out_ch);
            gemm(
                ho * wo,
                kk,
                out_ch,
                &cols,
                (kk as isize, 1),
                weight,
                (1, kk as isize),
                0.0,
                y.data_mut(),
            );
            if let Some(b) = bias {
                for px in y.data_mut().chunks_mut(out_ch) {
                    for (v, bv) in px.iter_mut().zip(b) {
                        *v += bv;
                    }
                }
            }
            y
        }
        LayerSpec::Relu => {
            let mask = relu_mask.unwrap_or(x);
            let mut y = x.clone();
            for (v, m) in y.data_mut().iter_mut().zip(mask.data()) {
                if *m <= 0.0 {
                    *v = 0.0;
                }
            }
            y
        }
        LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
            let (h, w, c) = x.shape();
            let mut y = FeatureMap::zeros(out_h, out_w, c);
            for oi in 0..out_h {
                let (i0, i1) = pool_range(oi, out_h, h);
                for oj in 0..out_w {
                    let (j0, j1) = pool_range(oj, out_w, w);
                    let count = ((i1 - i0) * (j1 - j0)) as f64;
                    let base = y.index(oi, oj, 0);
                    let acc = &mut y.data_mut()[base..base + c];
                    for i in i0..i1 {
                        for j in j0..j1 {
                            for (a, v) in acc.iter_mut().zip(x.pixel(i, j)) {
                                *a += v;
                            }
                        }
                    }
                    for a in acc {
                        *a /= count;
                    }
                }
            }
            y
        }
        LayerSpec::Dense { inputs, outputs } => {
            let mut y = FeatureMap::zeros(1, 1, outputs);
            gemm(
                1,
                inputs,
                outputs,
                x.data(),
                (inputs as isize, 1),
                weight,
                (1, inputs as isize),
                0.0,
                y.data_mut(),
            );
            if let Some(b) = bias {
                for (v, bv) in y.data_mut().iter_mut().zip(b) {
                    *v += bv;
                }
            }
            y
        }
        LayerSpec::Flatten => x.clone().reshape(1, 1, x.len()).expect("same length"),
    }
}

/// Reverse pass of one layer given its input `x` and output adjoint `dy`.
/// Accumulates into `d_weight`/`d_bias` when given and returns the input
/// adjoint when `want_dx`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    spec: &LayerSpec,
    weight: &[f64],
    x: &FeatureMap,
    dy: &FeatureMap,
    d_weight: Option<&mut [f64]>,
    d_bias: Option<&mut [f64]>,
    want_dx: bool,
) -> Option<FeatureMap> {
    match *spec {
        LayerSpec::Conv {
            out_ch,
            kernel,
            stride,
            pad,
            ..
        } => {
            let (ho, wo, _) = dy.shape();
            let kk = kernel * kernel * x.channels();
            let cols = im2col(x, kernel, stride, pad, ho, wo);
            if let Some(dw) = d_weight {
                // dW (out x kk) += dYᵀ (out x P) * cols (P x kk)
                gemm(
                    out_ch,
                    ho * wo,
                    kk,
                    dy.data(),
                    (1, out_ch as isize),
                    &cols,
                    (kk as isize, 1),
                    1.0,
                    dw,
                );
            }
            if let Some(db) = d_bias {
                for px in dy.data().chunks(out_ch) {
                    for (a, b) in db.iter_mut().zip(px) {
                        *a += b;
                    }
                }
            }
            if !want_dx {
                return None;
            }
            let mut dcols = vec![0.0; ho * wo * kk];
            gemm(
                ho * wo,
                out_ch,
                kk,
                dy.data(),
                (out_ch as isize, 1),
                weight,
                (kk as isize, 1),
                0.0,
                &mut dcols,
            );
            Some(col2im(&dcols, x.shape(), kernel, stride, pad, ho, wo))
        }
        LayerSpec::Relu => want_dx.then(|| {
            let mut dx = dy.clone();
            for (v, m) in dx.data_mut().iter_mut().zip(x.data()) {
                if *m <= 0.0 {
                    *v = 0.0;
                }
            }
            dx
        }),
        LayerSpec::AdaptiveAvgPool { out_h, out_w } => want_dx.then(|| {
            let (h, w, c) = x.shape();
            let mut dx = FeatureMap::zeros(h, w, c);
            for oi in 0..out_h {
                let (i0, i1) = pool_range(oi, out_h, h);
                for oj in 0..out_w {
                    let (j0, j1) = pool_range(oj, out_w, w);
                    let scale = 1.0 / ((i1 - i0) * (j1 - j0)) as f64;
                    let g = dy.pixel(oi, oj);
                    for i in i0..i1 {
                        for j in j0..j1 {
                            let d = dx.index(i, j, 0);
                            for (o, &gv) in dx.data_mut()[d..d + c].iter_mut().zip(g) {
                                *o += gv * scale;
                            }
                        }
                    }
                }
            }
            dx
        }),
        LayerSpec::Dense { inputs, outputs } => {
            if let Some(dw) = d_weight {
                for (o, row) in dw.chunks_mut(inputs).enumerate() {
                    let g = dy.data()[o];
                    if g != 0.0 {
                        for (a, xv) in row.iter_mut().zip(x.data()) {
                            *a += g * xv;
                        }
                    }
                }
            }
            if let Some(db) = d_bias {
                for (a, b) in db.iter_mut().zip(dy.data()) {
                    *a += b;
                }
            }
            want_dx.then(|| {
                let mut dx = FeatureMap::zeros(1, 1, inputs);
                gemm(
                    1,
                    outputs,
                    inputs,
                    dy.data(),
                    (outputs as isize, 1),
                    weight,
                    (inputs as isize, 1),
                    0.0,
                    dx.data_mut(),
                );
                dx
            })
        }
        LayerSpec::Flatten => want_dx.then(|| {
            dy.clone()
                .reshape(x.height(), x.width(), x.channels())
                .expect("same length")
        }),
    }
}
