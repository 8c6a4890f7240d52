//! Unconstrained raw vectors to valid warps.
//!
//! Per 1D function with `N` segments the increments are
//! `ε + (1 − Nε) · softplus(r_i) / Σ softplus(r)`, so every segment is at
//! least `ε` wide and the values are pinned to 0 and 1.

use std::ops::{Add, Div, Mul, Sub};

use crate::error::{Error, Result};
use crate::warp::{uniform_knots, PiecewiseMonotone1d, Warp2d};

/// Scalar supporting the operations used by the constrain map, so the same
/// code runs on `f64` and on dual numbers for directional derivatives.
trait Real: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self> {
    fn lift(v: f64) -> Self;
    fn softplus(self) -> Self;
    fn sigmoid(self) -> Self;
    fn exp(self) -> Self;
    fn value(self) -> f64;
    /// `ln softplus(x)`, finite for every finite `x`.
    fn log_softplus(self) -> Self;
    /// `sigmoid(x) / softplus(x)`, the derivative of `log_softplus`.
    fn dlog_softplus(self) -> Self;
}

/// Below this `ln softplus(x) = x` to double precision.
const LOG_SOFTPLUS_LINEAR: f64 = -40.0;

impl Real for f64 {
    fn lift(v: f64) -> Self {
        v
    }

    fn softplus(self) -> Self {
        self.max(0.0) + (-self.abs()).exp().ln_1p()
    }

    fn sigmoid(self) -> Self {
        if self >= 0.0 {
            1.0 / (1.0 + (-self).exp())
        } else {
            let e = self.exp();
            e / (1.0 + e)
        }
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn value(self) -> f64 {
        self
    }

    fn log_softplus(self) -> Self {
        if self < LOG_SOFTPLUS_LINEAR {
            self
        } else {
            self.softplus().ln()
        }
    }

    fn dlog_softplus(self) -> Self {
        if self < LOG_SOFTPLUS_LINEAR {
            1.0
        } else {
            self.sigmoid() / self.softplus()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: f64,
}

impl Add for Dual {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual {
            v: self.v + o.v,
            d: self.d + o.d,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual {
            v: self.v - o.v,
            d: self.d - o.d,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual {
            v: self.v * o.v,
            d: self.d * o.v + self.v * o.d,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Dual {
            v: self.v / o.v,
            d: (self.d * o.v - self.v * o.d) / (o.v * o.v),
        }
    }
}

impl Real for Dual {
    fn lift(v: f64) -> Self {
        Dual { v, d: 0.0 }
    }

    fn softplus(self) -> Self {
        Dual {
            v: self.v.softplus(),
            d: self.d * self.v.sigmoid(),
        }
    }

    fn sigmoid(self) -> Self {
        let s = self.v.sigmoid();
        Dual {
            v: s,
            d: self.d * s * (1.0 - s),
        }
    }

    fn exp(self) -> Self {
        let e = self.v.exp();
        Dual { v: e, d: self.d * e }
    }

    fn value(self) -> f64 {
        self.v
    }

    fn log_softplus(self) -> Self {
        Dual {
            v: self.v.log_softplus(),
            d: self.d * self.v.dlog_softplus(),
        }
    }

    fn dlog_softplus(self) -> Self {
        let q = self.v.dlog_softplus();
        let slope = if self.v < LOG_SOFTPLUS_LINEAR {
            0.0
        } else {
            let s = self.v.sigmoid();
            s * (1.0 - s) / self.v.softplus() - q * q
        };
        Dual {
            v: q,
            d: self.d * slope,
        }
    }
}

/// `softplus(r_i) / Σ softplus(r)`, normalized in log space so that it
/// stays finite when every softplus underflows.
fn shares<T: Real>(raw: &[T]) -> Vec<T> {
    let logs: Vec<T> = raw.iter().map(|r| r.log_softplus()).collect();
    let top = logs.iter().map(|l| l.value()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<T> = logs.iter().map(|&l| (l - T::lift(top)).exp()).collect();
    let total = e.iter().skip(1).fold(e[0], |a, &b| a + b);
    e.into_iter().map(|x| x / total).collect()
}

fn values_1d<T: Real>(raw: &[T], eps: f64, out: &mut [T]) {
    let n = raw.len();
    let w = shares(raw);
    let spare = T::lift(1.0 - n as f64 * eps);
    let mut acc = T::lift(0.0);
    out[0] = acc;
    for k in 1..n {
        acc = acc + T::lift(eps) + spare * w[k - 1];
        out[k] = acc;
    }
    out[n] = T::lift(1.0);
}

/// Gradient of `Σ_k a_k v_k(raw)` with respect to `raw`.
fn backward_1d<T: Real>(raw: &[T], eps: f64, a: &[f64], out: &mut [T]) {
    let n = raw.len();
    let w = shares(raw);
    let spare = T::lift(1.0 - n as f64 * eps);
    // d/d inc_i of Σ a_k v_k: v_k = Σ_{i<k} inc_i for 1 <= k < n (v_n pinned)
    let mut inc_bar = vec![0.0; n];
    let mut tail = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            tail += a[i + 1];
        }
        inc_bar[i] = tail;
    }
    let mut mean = T::lift(0.0);
    for i in 0..n {
        mean = mean + T::lift(inc_bar[i]) * w[i];
    }
    for j in 0..n {
        out[j] = spare * w[j] * (T::lift(inc_bar[j]) - mean) * raw[j].dlog_softplus();
    }
}

/// Maps raw vectors of a fixed grid layout to warps: `(M + 1) · N` row
/// entries followed by `(N + 1) · M` column entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constrainer {
    pub grid_n: usize,
    pub grid_m: usize,
    pub min_segment: f64,
}

impl Constrainer {
    pub fn new(grid_n: usize, grid_m: usize, min_segment: f64) -> Result<Self> {
        if grid_n == 0 || grid_m == 0 {
            return Err(Error::Usage("grid sizes must be positive".into()));
        }
        let worst = grid_n.max(grid_m) as f64;
        if !(min_segment >= 0.0) || min_segment * worst >= 1.0 {
            return Err(Error::Usage(format!(
                "min_segment {min_segment} incompatible with grid {grid_n}x{grid_m}"
            )));
        }
        Ok(Self {
            grid_n,
            grid_m,
            min_segment,
        })
    }

    pub fn raw_len(&self) -> usize {
        (self.grid_m + 1) * self.grid_n + (self.grid_n + 1) * self.grid_m
    }

    pub fn value_len(&self) -> usize {
        2 * (self.grid_m + 1) * (self.grid_n + 1)
    }

    /// `(raw offset, segments, value offset)` of every 1D function.
    fn chunks(&self) -> impl Iterator<Item = (usize, usize, usize)> {
        let (n, m) = (self.grid_n, self.grid_m);
        let rows = (0..=m).map(move |j| (j * n, n, j * (n + 1)));
        let cols = (0..=n).map(move |i| ((m + 1) * n + i * m, m, (m + 1) * (n + 1) + i * (m + 1)));
        rows.chain(cols)
    }

    fn check(&self, raw: &[f64]) -> Result<()> {
        if raw.len() != self.raw_len() {
            return Err(Error::Shape(format!(
                "raw vector has {} entries, grid {}x{} needs {}",
                raw.len(),
                self.grid_n,
                self.grid_m,
                self.raw_len()
            )));
        }
        Ok(())
    }

    /// Flat warp values in [`Warp2d::params`] order.
    pub fn values(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        let mut out = vec![0.0; self.value_len()];
        for (ro, n, vo) in self.chunks() {
            let r = &raw[ro..ro + n];
            let dst = &mut out[vo..vo + n + 1];
            if r.iter().all(|&v| v == r[0]) {
                // equal increments: the identity, exactly
                dst.copy_from_slice(&uniform_knots(n));
            } else {
                values_1d(r, self.min_segment, dst);
            }
        }
        Ok(out)
    }

    pub fn warp(&self, raw: &[f64]) -> Result<Warp2d> {
        let v = self.values(raw)?;
        let (n, m) = (self.grid_n, self.grid_m);
        let split = (m + 1) * (n + 1);
        let rows = v[..split]
            .chunks(n + 1)
            .map(|c| PiecewiseMonotone1d::uniform(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let cols = v[split..]
            .chunks(m + 1)
            .map(|c| PiecewiseMonotone1d::uniform(c.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Warp2d::new(rows, cols)
    }

    /// Chains a gradient with respect to the warp values back to `raw`.
    pub fn backward(&self, raw: &[f64], d_values: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        if d_values.len() != self.value_len() {
            return Err(Error::Shape(format!(
                "{} value gradients for {} values",
                d_values.len(),
                self.value_len()
            )));
        }
        let mut out = vec![0.0; raw.len()];
        for (ro, n, vo) in self.chunks() {
            backward_1d(
                &raw[ro..ro + n],
                self.min_segment,
                &d_values[vo..vo + n + 1],
                &mut out[ro..ro + n],
            );
        }
        Ok(out)
    }

    /// Directional derivative of the values along `d_raw`.
    pub fn jvp(&self, raw: &[f64], d_raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        self.check(d_raw)?;
        let mut out = vec![0.0; self.value_len()];
        for (ro, n, vo) in self.chunks() {
            let r: Vec<Dual> = (ro..ro + n).map(|k| Dual { v: raw[k], d: d_raw[k] }).collect();
            let mut vals = vec![Dual::lift(0.0); n + 1];
            values_1d(&r, self.min_segment, &mut vals);
            for (o, v) in out[vo..vo + n + 1].iter_mut().zip(&vals) {
                *o = v.d;
            }
        }
        Ok(out)
    }

    /// Hessian of `Σ a_k v_k(raw)` applied to `u`.
    pub fn hvp(&self, raw: &[f64], a: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        self.check(u)?;
        let mut out = vec![0.0; raw.len()];
        for (ro, n, vo) in self.chunks() {
            let r: Vec<Dual> = (ro..ro + n).map(|k| Dual { v: raw[k], d: u[k] }).collect();
            let mut g = vec![Dual::lift(0.0); n];
            backward_1d(&r, self.min_segment, &a[vo..vo + n + 1], &mut g);
            for (o, v) in out[ro..ro + n].iter_mut().zip(&g) {
                *o = v.d;
            }
        }
        Ok(out)
    }
}

/// Convenience wrapper around [`Constrainer::warp`].
pub fn constrain(raw: &[f64], grid_n: usize, grid_m: usize, min_segment: f64) -> Result<Warp2d> {
    Constrainer::new(grid_n, grid_m, min_segment)?.warp(raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c44() -> Constrainer {
        Constrainer::new(4, 4, 0.02).unwrap()
    }

    fn rand_vec(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect()
    }

    #[test]
    fn zero_raw_is_identity() {
        let c = c44();
        assert_eq!(c.raw_len(), 40);
        assert!(c.warp(&vec![0.0; 40]).unwrap().is_identity());
    }

    #[test]
    fn huge_entry_takes_almost_everything() {
        let c = Constrainer::new(4, 1, 0.02).unwrap();
        let mut raw = vec![0.0; c.raw_len()];
        raw[0] = 50.0;
        let w = c.warp(&raw).unwrap();
        let f = &w.rows()[0];
        let sp0 = 50.0 + (-50.0f64).exp().ln_1p();
        let total = sp0 + 3.0 * 2f64.ln();
        let first = 0.02 + 0.92 * sp0 / total;
        let other = 0.02 + 0.92 * 2f64.ln() / total;
        assert!((f.values()[1] - first).abs() < 1e-14);
        assert!((f.values()[2] - f.values()[1] - other).abs() < 1e-14);
    }

    #[test]
    fn any_raw_is_valid() {
        let c = c44();
        for seed in 0..200 {
            let w = c.warp(&rand_vec(40, 30.0, seed)).unwrap();
            assert!(w.min_segment() >= 0.02 - 1e-15);
        }
        assert!(c.warp(&[0.0; 3]).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let c = Constrainer::new(3, 2, 0.05).unwrap();
        let raw = rand_vec(c.raw_len(), 2.0, 1);
        let a = rand_vec(c.value_len(), 1.0, 2);
        let u = rand_vec(c.raw_len(), 1.0, 3);
        let dot = |r: &[f64]| -> f64 { c.values(r).unwrap().iter().zip(&a).map(|(x, y)| x * y).sum() };
        let g = c.backward(&raw, &a).unwrap();
        let h = 1e-6;
        for k in 0..raw.len() {
            let mut p = raw.clone();
            p[k] += h;
            let mut m = raw.clone();
            m[k] -= h;
            let fd = (dot(&p) - dot(&m)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-8, "grad {k}: {fd} vs {}", g[k]);
        }
        let jv = c.jvp(&raw, &u).unwrap();
        let shift = |s: f64| -> Vec<f64> { raw.iter().zip(&u).map(|(r, d)| r + s * d).collect() };
        let vp = c.values(&shift(h)).unwrap();
        let vm = c.values(&shift(-h)).unwrap();
        for k in 0..jv.len() {
            assert!(((vp[k] - vm[k]) / (2.0 * h) - jv[k]).abs() < 1e-8);
        }
        let hv = c.hvp(&raw, &a, &u).unwrap();
        let gp = c.backward(&shift(h), &a).unwrap();
        let gm = c.backward(&shift(-h), &a).unwrap();
        for k in 0..hv.len() {
            assert!(((gp[k] - gm[k]) / (2.0 * h) - hv[k]).abs() < 1e-7);
        }
    }
}
