//! Deep equilibrium canonicalization: warp parameters as the fixed point of
//! a learned map, found by Anderson acceleration.

pub(crate) mod anderson;
mod constrain;
mod energy;
mod net;
mod unrolled;

pub use anderson::{anderson, AndersonConfig, ResidualNorm, SolveStats};
pub use constrain::{constrain, Constrainer};
pub use energy::{
    gd_canonicalize, gradient_map_fixed_point, vanilla_canonicalize, AnalyticImage, ConstantEnergy, Energy, EnergyNet,
    GdConfig, GdResult, ImageEnergy, NetEnergy, ParamQuadratic, TemplateEnergy,
};
pub use net::{BackwardMode, CanonicalizerOutput, DecGrads, DecNet, DecTape};
pub use unrolled::{UnrolledGd, UnrolledTape};
