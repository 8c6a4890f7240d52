//! Random monotone warps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::grid2d::Warp2d;
use super::pwl::{uniform_knots, PiecewiseMonotone1d};
use crate::error::{Error, Result};

/// Draws warps whose segment increments follow a symmetric Dirichlet
/// distribution, shifted so every increment is at least `min_segment`.
///
/// The 2D variant is separable unless `row_jitter > 0`, in which case every
/// row and column function is a convex mix `(1 - δ) f + δ f_k` of the shared
/// function with an independent draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSampler {
    pub grid_size: usize,
    pub concentration: f64,
    pub min_segment: f64,
    #[serde(default)]
    pub row_jitter: f64,
    /// When set, every draw is the identity (degenerate Ω for tests).
    #[serde(default)]
    pub identity_only: bool,
}

impl Default for WarpSampler {
    fn default() -> Self {
        Self {
            grid_size: 4,
            concentration: 1.0,
            min_segment: 0.02,
            row_jitter: 0.0,
            identity_only: false,
        }
    }
}

impl WarpSampler {
    pub fn new(grid_size: usize, concentration: f64, min_segment: f64) -> Result<Self> {
        let s = Self {
            grid_size,
            concentration,
            min_segment,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn identity_only(grid_size: usize) -> Self {
        Self {
            grid_size,
            identity_only: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_size == 0 {
            return Err(Error::Usage("sampler grid_size must be positive".into()));
        }
        if !(self.concentration > 0.0) {
            return Err(Error::Usage("sampler concentration must be positive".into()));
        }
        if !(self.min_segment >= 0.0) || self.min_segment * self.grid_size as f64 >= 1.0 {
            return Err(Error::Usage(format!(
                "min_segment {} incompatible with {} segments",
                self.min_segment, self.grid_size
            )));
        }
        if !(0.0..=1.0).contains(&self.row_jitter) {
            return Err(Error::Usage("row_jitter must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn draw_values<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.grid_size;
        if self.identity_only {
            return uniform_knots(n);
        }
        let gamma = Gamma::new(self.concentration, 1.0).expect("validated concentration");
        let raw: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
        let total: f64 = raw.iter().sum();
        let spare = 1.0 - n as f64 * self.min_segment;
        let mut values = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for r in &raw[..n - 1] {
            acc += self.min_segment + spare * r / total;
            values.push(acc);
        }
        values.push(1.0);
        values
    }

    pub fn sample_1d_with<R: Rng>(&self, rng: &mut R) -> PiecewiseMonotone1d {
        PiecewiseMonotone1d::uniform(self.draw_values(rng)).expect("increments are positive")
    }

    pub fn sample_1d(&self, seed: u64) -> PiecewiseMonotone1d {
        self.sample_1d_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sample_2d_with<R: Rng>(&self, rng: &mut R) -> Warp2d {
        let n = self.grid_size;
        let fx = self.draw_values(rng);
        let fy = self.draw_values(rng);
        if self.row_jitter == 0.0 || self.identity_only {
            return Warp2d::separable(
                &PiecewiseMonotone1d::uniform(fx).expect("valid"),
                &PiecewiseMonotone1d::uniform(fy).expect("valid"),
                n,
                n,
            );
        }
        let d = self.row_jitter;
        let mut mixed = |base: &[f64]| {
            let own = self.draw_values(rng);
            let mut v: Vec<f64> = base.iter().zip(&own).map(|(b, o)| (1.0 - d) * b + d * o).collect();
            v[0] = 0.0;
            v[n] = 1.0;
            PiecewiseMonotone1d::uniform(v).expect("convex mix of increasing sequences")
        };
        let rows = (0..=n).map(|_| mixed(&fx)).collect();
        let cols = (0..=n).map(|_| mixed(&fy)).collect();
        Warp2d::new(rows, cols).expect("valid grid")
    }

    /// Deterministic in `seed`.
    pub fn sample_2d(&self, seed: u64) -> Warp2d {
        self.sample_2d_with(&mut ChaCha8Rng::seed_from_u64(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_warp() {
        let s = WarpSampler::default();
        assert_eq!(s.sample_2d(7), s.sample_2d(7));
        assert_eq!(s.sample_1d(7), s.sample_1d(7));
        assert_ne!(s.sample_1d(7), s.sample_1d(8));
    }

    #[test]
    fn samples_respect_floor() {
        let s = WarpSampler::new(8, 0.3, 0.05).unwrap();
        for seed in 0..500 {
            let w = s.sample_1d(seed);
            w.check_min_segment(0.05).unwrap();
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(WarpSampler::new(4, 0.0, 0.02).is_err());
        assert!(WarpSampler::new(4, 1.0, 0.25).is_err());
        assert!(WarpSampler::new(0, 1.0, 0.0).is_err());
    }

    #[test]
    fn jittered_rows_differ_but_stay_valid() {
        let s = WarpSampler {
            row_jitter: 0.1,
            ..WarpSampler::default()
        };
        let w = s.sample_2d(3);
        assert!(!w.is_separable());
        assert!(w.min_segment() > 0.0);
    }
}
