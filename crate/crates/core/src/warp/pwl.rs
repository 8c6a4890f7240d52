//! Strictly increasing piecewise-linear bijections of the unit interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knots closer than this are merged when building a composition.
const KNOT_MERGE_TOL: f64 = 1e-13;

/// A strictly increasing piecewise-linear map `[0, 1] -> [0, 1]` with
/// `l(0) = 0` and `l(1) = 1`.
///
/// `knots` are the breakpoints in the domain and `values` the images of the
/// knots. Between knots the function is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPwl")]
pub struct PiecewiseMonotone1d {
    knots: Vec<f64>,
    values: Vec<f64>,
}

/// Value of a 1D warp together with the partial derivatives with respect to
/// the two parameters of the active segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentEval {
    pub value: f64,
    /// Index of the right knot of the active segment (`1..=N`).
    pub segment: usize,
    /// Derivative with respect to `values[segment - 1]`.
    pub d_lo: f64,
    /// Derivative with respect to `values[segment]`.
    pub d_hi: f64,
}

impl PiecewiseMonotone1d {
    /// Builds a warp, checking the bijectivity pins and strict monotonicity.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidWarp(format!(
                "{} knots but {} values",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidWarp("need at least two knots".into()));
        }
        let n = knots.len() - 1;
        if knots[0] != 0.0 || knots[n] != 1.0 || values[0] != 0.0 || values[n] != 1.0 {
            return Err(Error::InvalidWarp("endpoints must be pinned to 0 and 1".into()));
        }
        for w in knots.windows(2).chain(values.windows(2)) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidWarp(format!(
                    "sequence not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { knots, values })
    }

    /// Builds a warp on the uniform knot grid `i / N`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let n = values.len().saturating_sub(1).max(1);
        Self::new(uniform_knots(n), values)
    }

    pub fn identity(segments: usize) -> Self {
        let knots = uniform_knots(segments.max(1));
        Self {
            values: knots.clone(),
            knots,
        }
    }

    /// Skips validation; used by finite-difference checks that perturb
    /// pinned values.
    #[cfg(test)]
    pub(crate) fn unchecked(knots: Vec<f64>, values: Vec<f64>) -> Self {
        Self { knots, values }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn has_uniform_knots(&self) -> bool {
        let n = self.segments() as f64;
        self.knots.iter().enumerate().all(|(i, &k)| k == i as f64 / n)
    }

    pub fn is_identity(&self) -> bool {
        self.knots == self.values
    }

    /// Smallest knot spacing and smallest value spacing.
    pub fn min_segment(&self) -> f64 {
        let dk = self.knots.windows(2).map(|w| w[1] - w[0]);
        let dv = self.values.windows(2).map(|w| w[1] - w[0]);
        dk.chain(dv).fold(f64::INFINITY, f64::min)
    }

    /// Checks the configured minimum segment width on both axes.
    pub fn check_min_segment(&self, min_segment: f64) -> Result<()> {
        let m = self.min_segment();
        if m + 1e-15 < min_segment {
            return Err(Error::InvalidWarp(format!(
                "segment width {m} below the floor {min_segment}"
            )));
        }
        Ok(())
    }

    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(k, v)| (v[1] - v[0]) / (k[1] - k[0]))
    }

    pub fn min_slope(&self) -> f64 {
        self.slopes().fold(f64::INFINITY, f64::min)
    }

    /// Index (1-based right knot) of the segment containing `x`. Knots belong
    /// to the segment on their right; `x = 1` belongs to the last segment.
    fn segment_of(points: &[f64], x: f64) -> usize {
        let n = points.len() - 1;
        points.partition_point(|&k| k <= x).clamp(1, n)
    }

    fn check_domain(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(Error::Domain { value: x })
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        Ok(self.eval_clamped(x))
    }

    /// Evaluation without the domain check; inputs are clamped to `[0, 1]`.
    pub fn eval_clamped(&self, x: f64) -> f64 {
        self.eval_with_grads(x.clamp(0.0, 1.0)).value
    }

    /// Evaluates and returns the derivatives with respect to the active
    /// segment's two values. The function is linear in its values.
    pub fn eval_with_grads(&self, x: f64) -> SegmentEval {
        let n = Self::segment_of(&self.knots, x);
        let (k0, k1) = (self.knots[n - 1], self.knots[n]);
        let (v0, v1) = (self.values[n - 1], self.values[n]);
        let u = (x - k0) / (k1 - k0);
        SegmentEval {
            value: v0 + (v1 - v0) * u,
            segment: n,
            d_lo: 1.0 - u,
            d_hi: u,
        }
    }

    /// Evaluates the exact inverse at `y` and returns its derivatives with
    /// respect to the two *values* of the active segment of `self`.
    pub fn eval_inverse_with_grads(&self, y: f64) -> SegmentEval {
        let n = Self::segment_of(&self.values, y);
        let (k0, k1) = (self.knots[n - 1], self.knots[n]);
        let (v0, v1) = (self.values[n - 1], self.values[n]);
        let dk = k1 - k0;
        let dv = v1 - v0;
        SegmentEval {
            value: k0 + (y - v0) * dk / dv,
            segment: n,
            d_lo: -dk * (v1 - y) / (dv * dv),
            d_hi: -dk * (y - v0) / (dv * dv),
        }
    }

    pub fn eval_inverse(&self, y: f64) -> Result<f64> {
        Self::check_domain(y)?;
        Ok(self.eval_inverse_with_grads(y).value)
    }

    /// Local scale factor `dl/dx`; at a knot the right segment's slope is
    /// used, and `x = 1` uses the last segment.
    pub fn local_scale_factor(&self, x: f64) -> Result<f64> {
        Self::check_domain(x)?;
        let n = Self::segment_of(&self.knots, x);
        Ok((self.values[n] - self.values[n - 1]) / (self.knots[n] - self.knots[n - 1]))
    }

    /// The exact inverse: knots and values swap roles.
    pub fn inverse(&self) -> Self {
        Self {
            knots: self.values.clone(),
            values: self.knots.clone(),
        }
    }

    /// Exact composition `self ∘ inner`, i.e. `x -> self(inner(x))`.
    ///
    /// The breakpoints of the result are the breakpoints of `inner` plus the
    /// preimages under `inner` of the breakpoints of `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        let mut knots: Vec<f64> = inner.knots.clone();
        knots.extend(
            self.knots[1..self.knots.len() - 1]
                .iter()
                .map(|&k| inner.eval_inverse_with_grads(k).value),
        );
        knots.sort_by(f64::total_cmp);
        knots.dedup_by(|b, a| (*b - *a).abs() <= KNOT_MERGE_TOL);
        // dedup keeps the first of a run; re-pin the right end.
        let last = knots.len() - 1;
        knots[last] = 1.0;
        let mut values: Vec<f64> = knots
            .iter()
            .map(|&k| self.eval_clamped(inner.eval_clamped(k)))
            .collect();
        values[0] = 0.0;
        values[last] = 1.0;
        Self { knots, values }
    }

    /// Maximum absolute pointwise difference on `samples + 1` uniform points
    /// plus the union of both knot sets.
    pub fn sup_distance(&self, other: &Self, samples: usize) -> f64 {
        let grid = (0..=samples).map(|i| i as f64 / samples as f64);
        grid.chain(self.knots.iter().copied())
            .chain(other.knots.iter().copied())
            .map(|x| (self.eval_clamped(x) - other.eval_clamped(x)).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Deserialize)]
struct RawPwl {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl TryFrom<RawPwl> for PiecewiseMonotone1d {
    type Error = Error;

    fn try_from(r: RawPwl) -> Result<Self> {
        Self::new(r.knots, r.values)
    }
}

pub fn uniform_knots(segments: usize) -> Vec<f64> {
    let n = segments as f64;
    (0..=segments).map(|i| i as f64 / n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bent() -> PiecewiseMonotone1d {
        PiecewiseMonotone1d::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.6, 1.0]).unwrap()
    }

    #[test]
    fn eval_examples() {
        let id = PiecewiseMonotone1d::identity(4);
        assert_eq!(id.eval(0.3).unwrap(), 0.3);
        let w = bent();
        assert!((w.eval(0.25).unwrap() - 0.3).abs() < 1e-15);
        assert!((w.eval(0.75).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(w.eval(1.2), Err(Error::Domain { .. })));
        assert!(matches!(w.eval(-0.01), Err(Error::Domain { .. })));
    }

    #[test]
    fn inverse_swaps_knots_and_values() {
        let inv = bent().inverse();
        assert_eq!(inv.knots(), &[0.0, 0.6, 1.0]);
        assert_eq!(inv.values(), &[0.0, 0.5, 1.0]);
        assert_eq!(
            PiecewiseMonotone1d::identity(3).inverse(),
            PiecewiseMonotone1d::identity(3)
        );
    }

    #[test]
    fn local_scale_examples() {
        let w = bent();
        assert!((w.local_scale_factor(0.2).unwrap() - 1.2).abs() < 1e-12);
        assert!((w.local_scale_factor(0.7).unwrap() - 0.8).abs() < 1e-12);
        // knots take the right segment
        assert!((w.local_scale_factor(0.5).unwrap() - 0.8).abs() < 1e-12);
        assert_eq!(PiecewiseMonotone1d::identity(4).local_scale_factor(0.9).unwrap(), 1.0);
    }

    #[test]
    fn compose_example_against_pointwise_oracle() {
        let a = bent();
        let b = PiecewiseMonotone1d::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.4, 1.0]).unwrap();
        let c = a.compose(&b);
        assert!((c.eval(0.5).unwrap() - 0.48).abs() < 1e-15);
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let oracle = a.eval(b.eval(x).unwrap()).unwrap();
            assert!((c.eval(x).unwrap() - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(PiecewiseMonotone1d::new(vec![0.0, 1.0], vec![0.0]).is_err());
        assert!(PiecewiseMonotone1d::new(vec![0.0], vec![0.0]).is_err());
        assert!(PiecewiseMonotone1d::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 0.9]).is_err());
        assert!(PiecewiseMonotone1d::new(vec![0.0, 0.5, 1.0], vec![0.0, 0.0, 1.0]).is_err());
        assert!(PiecewiseMonotone1d::new(vec![0.0, 0.6, 0.5, 1.0], vec![0.0, 0.2, 0.5, 1.0]).is_err());
    }

    #[test]
    fn inverse_grads_match_finite_differences() {
        let w = PiecewiseMonotone1d::uniform(vec![0.0, 0.1, 0.45, 0.7, 1.0]).unwrap();
        let y = 0.52;
        let e = w.eval_inverse_with_grads(y);
        let h = 1e-7;
        for (idx, analytic) in [(e.segment - 1, e.d_lo), (e.segment, e.d_hi)] {
            let mut vp = w.values().to_vec();
            let mut vm = w.values().to_vec();
            vp[idx] += h;
            vm[idx] -= h;
            let wp = PiecewiseMonotone1d {
                knots: w.knots().to_vec(),
                values: vp,
            };
            let wm = PiecewiseMonotone1d {
                knots: w.knots().to_vec(),
                values: vm,
            };
            let fd = (wp.eval_inverse_with_grads(y).value - wm.eval_inverse_with_grads(y).value) / (2.0 * h);
            assert!((fd - analytic).abs() < 1e-6, "{fd} vs {analytic}");
        }
    }
}
