//! Canonicalization under local scaling.
//!
//! Local scale changes are modelled as monotone piecewise-linear warps
//! ([`PiecewiseMonotone1d`], and [`Warp2d`] which blends row and column
//! functions). The [`dec`] module predicts such a warp for a feature map by
//! solving a fixed point with Anderson acceleration, and [`canon`] wraps
//! layers of a small CNN so that each block sees its input warped back to a
//! canonical form. [`datagen`] builds multi-digit images with per-digit
//! scales, [`metrics`] measures invariance and equivariance errors, and
//! [`baselines`] trains the comparison models.
//!
//! ```
//! use monocanon::PiecewiseMonotone1d;
//!
//! let f = PiecewiseMonotone1d::identity(4);
//! assert_eq!(f.eval(0.3).unwrap(), 0.3);
//! assert_eq!(f.eval_inverse(0.7).unwrap(), 0.7);
//! ```

// `!(x > 0.0)` style checks are deliberate: they reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alloc;
pub mod baselines;
pub mod bench;
pub mod canon;
pub mod checks;
pub mod cli;
pub mod datagen;
pub mod dec;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod sampling;
pub mod warp;

pub use error::{Error, Result};
pub use image::FeatureMap;
pub use warp::{PiecewiseMonotone1d, Warp2d, WarpSampler};
