//! Solve for a canonical warp with the deep equilibrium canonicalizer and
//! take training gradients through the fixed point.

use monocanon::dec::{AndersonConfig, BackwardMode, Constrainer, DecNet};
use monocanon::rng::stream_rng;
use monocanon::FeatureMap;
use rand::Rng;

fn main() -> monocanon::Result<()> {
    let c = Constrainer::new(4, 4, 0.02)?;
    let mut dec = DecNet::new((32, 32, 1), c, (8, 16))?;
    let img = FeatureMap::from_fn(32, 32, |x, y| ((6.0 * x).sin() * (4.0 * y).cos()).max(0.0));

    let cfg = AndersonConfig::default();
    let out = dec.solve(&img, None, &cfg)?;
    println!(
        "fresh DEC: identity warp {} after {} iteration(s)",
        out.warp.is_identity(),
        out.stats.iterations
    );

    // small random weights make H a contraction with a nontrivial fixed point
    let mut rng = stream_rng(0, 0);
    let p: Vec<f64> = (0..dec.net().param_count())
        .map(|_| rng.random_range(-0.05..0.05))
        .collect();
    dec.net_mut().set_params(&p)?;
    let out = dec.solve(&img, None, &cfg)?;
    println!(
        "random DEC: {} iterations, residual {:.2e}, converged {}, warp moves the grid by {:.4}",
        out.stats.iterations,
        out.stats.residual,
        out.stats.converged,
        out.warp.sup_distance(&monocanon::Warp2d::identity(4, 4), 50)
    );

    let up: Vec<f64> = (0..c.raw_len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let grads = |mode| -> monocanon::Result<Vec<f64>> {
        let tape = dec.forward_train(&img, &cfg, mode)?;
        Ok(dec.backward(&tape, mode, &up)?.params)
    };
    let a = grads(BackwardMode::Phantom1)?;
    let b = grads(BackwardMode::Unroll { k: 5 })?;
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    println!("phantom-1 vs unroll-5 gradient cosine {:.4}", dot / (na * nb));
    Ok(())
}
