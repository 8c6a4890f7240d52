//! Monotone warps form a group under composition: compose, invert and
//! check the laws on a few random elements.

use monocanon::checks::{check_group, GroupCheckConfig};
use monocanon::{PiecewiseMonotone1d, Warp2d, WarpSampler};

fn main() -> monocanon::Result<()> {
    let sampler = WarpSampler::new(4, 1.0, 0.02)?;
    let f = sampler.sample_1d(1);
    let g = sampler.sample_1d(2);
    let fg = f.compose(&g);
    println!("f values   {:?}", f.values());
    println!("f∘g knots  {:?}", fg.knots());
    for x in [0.1, 0.5, 0.9] {
        println!(
            "x={x}: f(g(x))={:.6}  (f∘g)(x)={:.6}  f⁻¹(f(x))={:.6}",
            f.eval(g.eval(x)?)?,
            fg.eval(x)?,
            f.inverse().eval(f.eval(x)?)?
        );
    }
    let id = PiecewiseMonotone1d::identity(4);
    println!("f∘id == f: {}", f.compose(&id).sup_distance(&f, 1000) < 1e-12);

    // separable 2D warps compose exactly as well
    let a = Warp2d::separable(&f, &g, 4, 4);
    let b = Warp2d::separable(&g, &f, 4, 4);
    let ab = a.compose(&b)?;
    let p = (0.3, 0.7);
    println!("2D: a(b(p)) = {:?}, (a∘b)(p) = {:?}", a.eval(b.eval(p)?)?, ab.eval(p)?);
    println!("jacobian of a∘b at p: {:?}", ab.jacobian(p)?);

    let report = check_group(&GroupCheckConfig {
        triples: 200,
        jacobian_points: 1000,
        ..GroupCheckConfig::default()
    })?;
    println!("{}", report.summary());
    Ok(())
}
