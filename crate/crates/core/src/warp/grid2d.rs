//! Two-dimensional monotone warps built from per-row and per-column 1D warps.
//!
//! Row function `j` sits at height `y_j = j / M` and gives `l_X` along that
//! row; column function `i` sits at `x_i = i / N` and gives `l_Y`. Between
//! grid lines the two neighbouring functions are blended linearly.

use serde::{Deserialize, Serialize};

use super::pwl::{uniform_knots, PiecewiseMonotone1d};
use crate::error::{Error, Result};

/// Which map a [`Warp2d`] evaluation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// The warp `l` itself.
    Forward,
    /// The approximate inverse obtained by inverting every row and column
    /// function individually (see [`Warp2d::inverse`]).
    Inverse,
}

/// A mapped point together with sparse derivatives of both output
/// coordinates with respect to the flat parameter vector of the warp.
#[derive(Debug, Clone, Copy)]
pub struct PointEval {
    pub x: f64,
    pub y: f64,
    pub dx: [(usize, f64); 4],
    pub dy: [(usize, f64); 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WarpJson", into = "WarpJson")]
pub struct Warp2d {
    rows: Vec<PiecewiseMonotone1d>,
    cols: Vec<PiecewiseMonotone1d>,
    row_grid: Vec<f64>,
    col_grid: Vec<f64>,
    row_offsets: Vec<usize>,
    col_offsets: Vec<usize>,
}

impl Warp2d {
    /// `rows` holds `M + 1` functions of x, `cols` holds `N + 1` functions of y.
    pub fn new(rows: Vec<PiecewiseMonotone1d>, cols: Vec<PiecewiseMonotone1d>) -> Result<Self> {
        if rows.len() < 2 || cols.len() < 2 {
            return Err(Error::InvalidWarp(
                "a 2D warp needs at least two row and two column functions".into(),
            ));
        }
        let row_grid = uniform_knots(rows.len() - 1);
        let col_grid = uniform_knots(cols.len() - 1);
        let mut offset = 0;
        let mut row_offsets = Vec::with_capacity(rows.len());
        for r in &rows {
            row_offsets.push(offset);
            offset += r.values().len();
        }
        let mut col_offsets = Vec::with_capacity(cols.len());
        for c in &cols {
            col_offsets.push(offset);
            offset += c.values().len();
        }
        Ok(Self {
            rows,
            cols,
            row_grid,
            col_grid,
            row_offsets,
            col_offsets,
        })
    }

    pub fn identity(grid_n: usize, grid_m: usize) -> Self {
        Self::separable(
            &PiecewiseMonotone1d::identity(grid_n),
            &PiecewiseMonotone1d::identity(grid_m),
            grid_n,
            grid_m,
        )
    }

    /// Warp whose rows all equal `fx` and whose columns all equal `fy`, so
    /// that `l(x, y) = (fx(x), fy(y))`.
    pub fn separable(fx: &PiecewiseMonotone1d, fy: &PiecewiseMonotone1d, grid_n: usize, grid_m: usize) -> Self {
        Self::new(vec![fx.clone(); grid_m + 1], vec![fy.clone(); grid_n + 1]).expect("grid sizes are positive")
    }

    /// Number of column cells `N` (column functions are `N + 1`).
    pub fn grid_n(&self) -> usize {
        self.cols.len() - 1
    }

    /// Number of row cells `M` (row functions are `M + 1`).
    pub fn grid_m(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn rows(&self) -> &[PiecewiseMonotone1d] {
        &self.rows
    }

    pub fn cols(&self) -> &[PiecewiseMonotone1d] {
        &self.cols
    }

    pub fn is_identity(&self) -> bool {
        self.rows.iter().chain(&self.cols).all(|f| f.is_identity())
    }

    pub fn is_separable(&self) -> bool {
        self.rows.windows(2).all(|w| w[0] == w[1]) && self.cols.windows(2).all(|w| w[0] == w[1])
    }

    /// Length of the flat parameter vector: every value of every row
    /// function, then every value of every column function.
    pub fn param_count(&self) -> usize {
        self.rows.iter().chain(&self.cols).map(|f| f.values().len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.rows
            .iter()
            .chain(&self.cols)
            .flat_map(|f| f.values().iter().copied())
            .collect()
    }

    pub fn row_offset(&self, j: usize) -> usize {
        self.row_offsets[j]
    }

    pub fn col_offset(&self, i: usize) -> usize {
        self.col_offsets[i]
    }

    /// Same knots, new values; fails if the values break the invariants.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} warp parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        let mut rebuild = |f: &PiecewiseMonotone1d| {
            let vals: Vec<f64> = it.by_ref().take(f.values().len()).collect();
            PiecewiseMonotone1d::new(f.knots().to_vec(), vals)
        };
        let rows = self.rows.iter().map(&mut rebuild).collect::<Result<Vec<_>>>()?;
        let cols = self.cols.iter().map(&mut rebuild).collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols)
    }

    pub fn min_segment(&self) -> f64 {
        self.rows
            .iter()
            .chain(&self.cols)
            .map(|f| f.min_segment())
            .fold(f64::INFINITY, f64::min)
    }

    fn cell(grid: &[f64], t: f64) -> (usize, f64) {
        let n = grid.len() - 1;
        let j = grid.partition_point(|&g| g <= t).clamp(1, n);
        (j, (t - grid[j - 1]) / (grid[j] - grid[j - 1]))
    }

    fn check(p: (f64, f64)) -> Result<()> {
        for v in [p.0, p.1] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain { value: v });
            }
        }
        Ok(())
    }

    /// `l(x, y) = (l_X(x, y), l_Y(x, y))`.
    pub fn eval(&self, p: (f64, f64)) -> Result<(f64, f64)> {
        Self::check(p)?;
        let e = self.eval_with_grads(p.0, p.1, Direction::Forward);
        Ok((e.x, e.y))
    }

    /// Evaluates the approximate inverse without materialising it.
    pub fn eval_inverse(&self, p: (f64, f64)) -> Result<(f64, f64)> {
        Self::check(p)?;
        let e = self.eval_with_grads(p.0, p.1, Direction::Inverse);
        Ok((e.x, e.y))
    }

    /// Evaluates `l` (or its row/column-wise inverse) at a point, clamping
    /// the point into the unit square, with derivatives with respect to the
    /// flat parameters of `self`.
    pub fn eval_with_grads(&self, x: f64, y: f64, dir: Direction) -> PointEval {
        let x = x.clamp(0.0, 1.0);
        let y = y.clamp(0.0, 1.0);
        let (j, t) = Self::cell(&self.row_grid, y);
        let (i, s) = Self::cell(&self.col_grid, x);
        let one = |f: &PiecewiseMonotone1d, at: f64| match dir {
            Direction::Forward => f.eval_with_grads(at),
            Direction::Inverse => f.eval_inverse_with_grads(at),
        };
        let r0 = one(&self.rows[j - 1], x);
        let r1 = one(&self.rows[j], x);
        let c0 = one(&self.cols[i - 1], y);
        let c1 = one(&self.cols[i], y);
        let ro0 = self.row_offsets[j - 1];
        let ro1 = self.row_offsets[j];
        let co0 = self.col_offsets[i - 1];
        let co1 = self.col_offsets[i];
        PointEval {
            x: (1.0 - t) * r0.value + t * r1.value,
            y: (1.0 - s) * c0.value + s * c1.value,
            dx: [
                (ro0 + r0.segment - 1, (1.0 - t) * r0.d_lo),
                (ro0 + r0.segment, (1.0 - t) * r0.d_hi),
                (ro1 + r1.segment - 1, t * r1.d_lo),
                (ro1 + r1.segment, t * r1.d_hi),
            ],
            dy: [
                (co0 + c0.segment - 1, (1.0 - s) * c0.d_lo),
                (co0 + c0.segment, (1.0 - s) * c0.d_hi),
                (co1 + c1.segment - 1, s * c1.d_lo),
                (co1 + c1.segment, s * c1.d_hi),
            ],
        }
    }

    /// Approximate inverse: every row and column function is inverted
    /// exactly and kept at its grid position. Exact for separable warps, and
    /// `w.inverse().inverse() == w`.
    pub fn inverse(&self) -> Self {
        Self::new(
            self.rows.iter().map(|f| f.inverse()).collect(),
            self.cols.iter().map(|f| f.inverse()).collect(),
        )
        .expect("inverse keeps the grid")
    }

    /// Local Jacobian `[[dlX/dx, dlX/dy], [dlY/dx, dlY/dy]]` of the blended
    /// map, differentiated analytically. On grid lines the cell above/right
    /// is used.
    pub fn jacobian(&self, p: (f64, f64)) -> Result<[[f64; 2]; 2]> {
        Self::check(p)?;
        let (x, y) = p;
        let (j, t) = Self::cell(&self.row_grid, y);
        let (i, s) = Self::cell(&self.col_grid, x);
        let dy_cell = self.row_grid[j] - self.row_grid[j - 1];
        let dx_cell = self.col_grid[i] - self.col_grid[i - 1];
        let (r0, r1) = (&self.rows[j - 1], &self.rows[j]);
        let (c0, c1) = (&self.cols[i - 1], &self.cols[i]);
        let lxx = (1.0 - t) * r0.local_scale_factor(x)? + t * r1.local_scale_factor(x)?;
        let lxy = (r1.eval(x)? - r0.eval(x)?) / dy_cell;
        let lyx = (c1.eval(y)? - c0.eval(y)?) / dx_cell;
        let lyy = (1.0 - s) * c0.local_scale_factor(y)? + s * c1.local_scale_factor(y)?;
        Ok([[lxx, lxy], [lyx, lyy]])
    }

    /// Approximate composition `self ∘ inner`.
    ///
    /// Separable pairs compose exactly function by function. Otherwise each
    /// row (column) function of the result is refit by sampling the exact
    /// composite along the grid line at the union of a uniform grid and the
    /// inner function's knots.
    pub fn compose(&self, inner: &Self) -> Result<Self> {
        if self.is_separable() && inner.is_separable() {
            let fx = self.rows[0].compose(&inner.rows[0]);
            let fy = self.cols[0].compose(&inner.cols[0]);
            return Ok(Self::separable(&fx, &fy, inner.grid_n(), inner.grid_m()));
        }
        let refit = |f: &PiecewiseMonotone1d, segments: usize, along_x: bool, at: f64| {
            let mut knots = uniform_knots(segments);
            knots.extend_from_slice(f.knots());
            knots.sort_by(f64::total_cmp);
            knots.dedup_by(|b, a| (*b - *a).abs() < 1e-13);
            let values: Vec<f64> = knots
                .iter()
                .map(|&k| {
                    let p = if along_x { (k, at) } else { (at, k) };
                    let q = inner.eval_with_grads(p.0, p.1, Direction::Forward);
                    let r = self.eval_with_grads(q.x, q.y, Direction::Forward);
                    if along_x {
                        r.x
                    } else {
                        r.y
                    }
                })
                .collect();
            let last = values.len() - 1;
            let mut values = values;
            values[0] = 0.0;
            values[last] = 1.0;
            PiecewiseMonotone1d::new(knots, values)
        };
        let rows = inner
            .rows
            .iter()
            .enumerate()
            .map(|(j, f)| refit(f, inner.grid_n().max(self.grid_n()), true, inner.row_grid[j]))
            .collect::<Result<Vec<_>>>()?;
        let cols = inner
            .cols
            .iter()
            .enumerate()
            .map(|(i, f)| refit(f, inner.grid_m().max(self.grid_m()), false, inner.col_grid[i]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(rows, cols)
    }

    /// Largest pointwise distance between two warps over a uniform lattice.
    pub fn sup_distance(&self, other: &Self, samples: usize) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..=samples {
            for b in 0..=samples {
                let p = (a as f64 / samples as f64, b as f64 / samples as f64);
                let u = self.eval_with_grads(p.0, p.1, Direction::Forward);
                let v = other.eval_with_grads(p.0, p.1, Direction::Forward);
                worst = worst.max((u.x - v.x).abs()).max((u.y - v.y).abs());
            }
        }
        worst
    }
}

/// On-disk form: uniform knots are implied unless `row_knots`/`col_knots`
/// are present.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WarpJson {
    grid_n: usize,
    grid_m: usize,
    rows: Vec<Vec<f64>>,
    cols: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_knots: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    col_knots: Option<Vec<Vec<f64>>>,
}

impl From<Warp2d> for WarpJson {
    fn from(w: Warp2d) -> Self {
        let uniform = w.rows.iter().chain(&w.cols).all(|f| f.has_uniform_knots());
        let knots = |fs: &[PiecewiseMonotone1d]| (!uniform).then(|| fs.iter().map(|f| f.knots().to_vec()).collect());
        WarpJson {
            grid_n: w.grid_n(),
            grid_m: w.grid_m(),
            row_knots: knots(&w.rows),
            col_knots: knots(&w.cols),
            rows: w.rows.iter().map(|f| f.values().to_vec()).collect(),
            cols: w.cols.iter().map(|f| f.values().to_vec()).collect(),
        }
    }
}

impl TryFrom<WarpJson> for Warp2d {
    type Error = Error;

    fn try_from(j: WarpJson) -> Result<Self> {
        if j.rows.len() != j.grid_m + 1 || j.cols.len() != j.grid_n + 1 {
            return Err(Error::InvalidWarp(format!(
                "grid {}x{} needs {} rows and {} cols, got {} and {}",
                j.grid_n,
                j.grid_m,
                j.grid_m + 1,
                j.grid_n + 1,
                j.rows.len(),
                j.cols.len()
            )));
        }
        let build = |vals: Vec<Vec<f64>>, knots: Option<Vec<Vec<f64>>>| -> Result<Vec<_>> {
            match knots {
                Some(ks) => {
                    if ks.len() != vals.len() {
                        return Err(Error::InvalidWarp("knot table length mismatch".into()));
                    }
                    ks.into_iter()
                        .zip(vals)
                        .map(|(k, v)| PiecewiseMonotone1d::new(k, v))
                        .collect()
                }
                None => vals.into_iter().map(PiecewiseMonotone1d::uniform).collect(),
            }
        };
        Warp2d::new(build(j.rows, j.row_knots)?, build(j.cols, j.col_knots)?)
    }
}

impl Warp2d {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("warp serialisation is infallible")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(vals: &[f64]) -> PiecewiseMonotone1d {
        PiecewiseMonotone1d::uniform(vals.to_vec()).unwrap()
    }

    fn skewed() -> Warp2d {
        let rows = vec![
            f(&[0.0, 0.3, 0.5, 0.8, 1.0]),
            f(&[0.0, 0.2, 0.45, 0.7, 1.0]),
            f(&[0.0, 0.25, 0.5, 0.75, 1.0]),
        ];
        let cols = vec![
            f(&[0.0, 0.4, 1.0]),
            f(&[0.0, 0.55, 1.0]),
            f(&[0.0, 0.5, 1.0]),
            f(&[0.0, 0.6, 1.0]),
            f(&[0.0, 0.35, 1.0]),
        ];
        Warp2d::new(rows, cols).unwrap()
    }

    #[test]
    fn identity_fixes_points() {
        let w = Warp2d::identity(4, 4);
        for p in [(0.0, 0.0), (0.37, 0.61), (1.0, 0.2)] {
            let q = w.eval(p).unwrap();
            assert!((q.0 - p.0).abs() < 1e-15 && (q.1 - p.1).abs() < 1e-15);
        }
        assert!(w.eval((1.1, 0.0)).is_err());
    }

    #[test]
    fn grid_rows_are_interpolation_endpoints() {
        let w = skewed();
        for (j, y) in [(0usize, 0.0), (1, 0.5), (2, 1.0)] {
            for x in [0.1, 0.33, 0.9] {
                let q = w.eval((x, y)).unwrap();
                assert_eq!(q.0, w.rows()[j].eval(x).unwrap());
            }
        }
    }

    #[test]
    fn param_grads_match_finite_differences() {
        let w = skewed();
        let p = w.params();
        let h = 1e-7;
        for dir in [Direction::Forward, Direction::Inverse] {
            let e = w.eval_with_grads(0.41, 0.73, dir);
            let mut dense_x = vec![0.0; p.len()];
            let mut dense_y = vec![0.0; p.len()];
            for (k, d) in e.dx {
                dense_x[k] += d;
            }
            for (k, d) in e.dy {
                dense_y[k] += d;
            }
            for k in 0..p.len() {
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[k] += h;
                pm[k] -= h;
                // bypass validation: pinned endpoints may be perturbed here
                let wp = raw_with(&w, &pp);
                let wm = raw_with(&w, &pm);
                let ep = wp.eval_with_grads(0.41, 0.73, dir);
                let em = wm.eval_with_grads(0.41, 0.73, dir);
                assert!(((ep.x - em.x) / (2.0 * h) - dense_x[k]).abs() < 1e-6);
                assert!(((ep.y - em.y) / (2.0 * h) - dense_y[k]).abs() < 1e-6);
            }
        }
    }

    fn raw_with(w: &Warp2d, p: &[f64]) -> Warp2d {
        let mut it = p.iter().copied();
        let mut take = |g: &PiecewiseMonotone1d| {
            let vals: Vec<f64> = it.by_ref().take(g.values().len()).collect();
            PiecewiseMonotone1d::unchecked(g.knots().to_vec(), vals)
        };
        let rows: Vec<_> = w.rows().iter().map(&mut take).collect();
        let cols: Vec<_> = w.cols().iter().map(&mut take).collect();
        Warp2d::new(rows, cols).unwrap()
    }

    #[test]
    fn double_inverse_is_exact() {
        let w = skewed();
        assert_eq!(w.inverse().inverse(), w);
    }

    #[test]
    fn json_round_trip_uniform_and_general() {
        let w = skewed();
        let s = w.to_json();
        assert!(!s.contains("row_knots"));
        assert_eq!(Warp2d::from_json(&s).unwrap(), w);
        let inv = w.inverse();
        let s = inv.to_json();
        assert!(s.contains("row_knots"));
        assert_eq!(Warp2d::from_json(&s).unwrap(), inv);
        assert!(Warp2d::from_json(r#"{"grid_n":1,"grid_m":1,"rows":[[0,1]],"cols":[[0,1],[0,1]]}"#).is_err());
    }

    #[test]
    fn jacobian_of_separable_is_diagonal_slopes() {
        let fx = f(&[0.0, 0.3, 0.5, 0.8, 1.0]);
        let fy = f(&[0.0, 0.1, 0.5, 0.9, 1.0]);
        let w = Warp2d::separable(&fx, &fy, 4, 4);
        let j = w.jacobian((0.3, 0.6)).unwrap();
        assert!((j[0][0] - fx.local_scale_factor(0.3).unwrap()).abs() < 1e-12);
        assert!((j[1][1] - fy.local_scale_factor(0.6).unwrap()).abs() < 1e-12);
        assert_eq!(j[0][1], 0.0);
        assert_eq!(j[1][0], 0.0);
    }
}
