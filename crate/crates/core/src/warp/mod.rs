//! Exact algebra of monotone piecewise-linear warps in one and two dimensions.

mod grid2d;
mod pwl;
mod sampler;

pub use grid2d::{Direction, PointEval, Warp2d};
pub use pwl::{uniform_knots, PiecewiseMonotone1d, SegmentEval};
pub use sampler::WarpSampler;

/// Symmetric part of a 2x2 matrix is positive definite.
pub fn is_positive_definite(j: &[[f64; 2]; 2]) -> bool {
    let a = j[0][0];
    let d = j[1][1];
    let b = 0.5 * (j[0][1] + j[1][0]);
    a > 0.0 && a * d - b * b > 0.0
}
