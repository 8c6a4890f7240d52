//! Gradient descent on a template-matching energy and Anderson acceleration
//! on its gradient map land on the same warp.

use monocanon::checks::{claim1_instance, Claim1Config};
use monocanon::dec::{gd_canonicalize, gradient_map_fixed_point};

fn main() -> monocanon::Result<()> {
    let cfg = Claim1Config::default();
    for i in 0..3 {
        let energy = claim1_instance(&cfg, i)?;
        let z0 = vec![0.0; energy.constrainer.raw_len()];
        let gd = gd_canonicalize(&energy, &energy.constrainer, &z0, &cfg.gd)?;
        let (fp, stats) = gradient_map_fixed_point(&energy, &z0, cfg.eta, &cfg.anderson)?;
        let gap = gd.raw.iter().zip(&fp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "instance {i}: GD {} steps (|grad| {:.1e}), Anderson {} iterations; sup gap {gap:.2e}",
            gd.steps, gd.grad_norm, stats.iterations
        );
    }
    Ok(())
}
