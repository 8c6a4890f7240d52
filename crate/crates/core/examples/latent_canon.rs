//! Latent canonicalization with an oracle warp: wrapping a conv layer as
//! `S(M(S⁻¹(x)))` makes it equivariant up to interpolation.

use monocanon::canon::{AdaptedLayer, AdaptedNetwork, Canonicalizer};
use monocanon::dec::AnalyticImage;
use monocanon::metrics::{equivariance_error, equivariance_error_with, Reduction};
use monocanon::nn::{LayerSpec, Sequential};
use monocanon::WarpSampler;

fn main() -> monocanon::Result<()> {
    let images: Vec<_> = (0..20)
        .map(|i| {
            let t = i as f64 / 20.0;
            AnalyticImage {
                blobs: vec![(0.3 + 0.4 * t, 0.5, 0.08, 1.0), (0.6, 0.2 + 0.5 * t, 0.05, -0.7)],
            }
            .render(48, 48)
        })
        .collect();
    let mut conv = Sequential::new((48, 48, 1), vec![LayerSpec::conv(1, 8, 3, 1, 1)])?;
    conv.init_he(0);
    let head = Sequential::new(conv.output_shape(), vec![LayerSpec::Flatten])?;
    let sampler = WarpSampler::default();

    let bare = equivariance_error(|x| conv.predict(x), &images, &sampler, 2, 0, Reduction::Mean)?;
    let adapted = equivariance_error_with(
        |x, w| {
            AdaptedNetwork::new(vec![conv.clone()], head.clone())?
                .with_adapters(vec![AdaptedLayer::equivariant(Canonicalizer::Oracle(w.clone()))])?
                .features(x)
        },
        &images,
        &sampler,
        2,
        0,
        Reduction::Mean,
    )?;
    println!("bare conv EquE    {:.3e}", bare.equ_e);
    println!("oracle-wrapped    {:.3e}", adapted.equ_e);
    println!("interpolation floor {:.3e}", adapted.interpolation_floor);
    Ok(())
}
