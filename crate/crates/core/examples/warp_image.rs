//! Warp an image with a random monotone scaling, undo it, and measure the
//! interpolation floor of the round trip. Writes `warp_image.pgm`.

use monocanon::cli::demo_panels;
use monocanon::datagen::{generate_split, ComposeConfig, DigitSource, Split};
use monocanon::sampling::{apply_warp, apply_warp_inverse};
use monocanon::WarpSampler;

fn main() -> monocanon::Result<()> {
    let samples = generate_split(&DigitSource::procedural(Split::Test), &ComposeConfig::default(), 0, 3)?;
    let sampler = WarpSampler::new(4, 2.0, 0.02)?;
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let warps: Vec<_> = (0..images.len() as u64).map(|i| sampler.sample_2d(i)).collect();
    for (img, w) in images.iter().zip(&warps) {
        let back = apply_warp_inverse(&apply_warp(img, w), w);
        println!(
            "round trip: mean sq error {:.3e}, max abs {:.3e}; local scale at centre {:?}",
            back.mean_sq_diff(img),
            back.max_abs_diff(img),
            w.jacobian((0.5, 0.5))?
        );
    }
    let panel = demo_panels(&images, &warps, 8, 2)?;
    let out = std::path::Path::new("warp_image.pgm");
    panel.write_pnm(out)?;
    println!("original | warped | unwarped rows written to {}", out.display());
    Ok(())
}
