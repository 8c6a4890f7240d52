//! EquE with its interpolation floor, InvE over warped variants and
//! per-scale accuracy for an untrained toy classifier.

use monocanon::baselines::predictions;
use monocanon::canon::{AdaptedNetwork, ToyArch};
use monocanon::datagen::{generate_split, make_variants, ComposeConfig, DigitSource, Split};
use monocanon::metrics::{equivariance_error, invariance_error, per_scale_accuracy, Reduction, DEFAULT_BUCKETS};
use monocanon::WarpSampler;

fn main() -> monocanon::Result<()> {
    let test = generate_split(&DigitSource::procedural(Split::Test), &ComposeConfig::default(), 0, 64)?;
    let (blocks, head) = ToyArch::default().build(0)?;
    let net = AdaptedNetwork::new(blocks, head)?;
    let sampler = WarpSampler::default();
    let images: Vec<_> = test.iter().take(16).map(|s| s.image.clone()).collect();

    let id = equivariance_error(|x| Ok(x.clone()), &images, &sampler, 4, 0, Reduction::Mean)?;
    let equ = equivariance_error(|x| net.features(x), &images, &sampler, 4, 0, Reduction::Mean)?;
    println!(
        "identity model EquE {:.3e} (floor {:.3e})",
        id.equ_e, id.interpolation_floor
    );
    println!("toy CNN EquE        {:.3e} over {} pairs", equ.equ_e, equ.pairs);

    let groups: Vec<Vec<_>> = test
        .iter()
        .take(16)
        .map(|s| {
            let mut g = vec![s.image.clone()];
            g.extend(make_variants(s, &sampler, 4, 0).into_iter().map(|v| v.image));
            g
        })
        .collect();
    let inv = invariance_error(|x| net.logits(x), &groups, false, Reduction::Mean)?;
    println!("toy CNN InvE        {:.3e} ± {:.3e}", inv.inv_e, inv.inv_e_std);

    let ps = per_scale_accuracy(&predictions(&net, &test)?, &DEFAULT_BUCKETS)?;
    for b in &ps.buckets {
        println!("scale {:?}: accuracy {:.3} over {}", (b.lo, b.hi), b.acc, b.n);
    }
    println!("accuracy std across buckets {:.4}", ps.std);
    Ok(())
}
