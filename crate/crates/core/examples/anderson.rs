//! Anderson mixing against plain fixed-point iteration on a linear
//! contraction, for a few window sizes.

use monocanon::checks::affine_contraction;
use monocanon::dec::{AndersonConfig, ResidualNorm};

fn main() -> monocanon::Result<()> {
    for window in [1, 2, 5, 16] {
        let cfg = AndersonConfig {
            window,
            max_iters: 400,
            tol: 1e-8,
            norm: ResidualNorm::Absolute,
            ..AndersonConfig::default()
        };
        let o = affine_contraction(16, 0.95, 0, &cfg)?;
        println!(
            "window {window:>2}: anderson {:?} iterations, picard {:?}, distance to direct solve {:.1e}",
            o.anderson_iters, o.picard_iters, o.direct_gap
        );
    }
    Ok(())
}
