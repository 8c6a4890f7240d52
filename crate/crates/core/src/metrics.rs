//! Consistency metrics: equivariance error with its interpolation floor,
//! invariance error over variant groups, per-scale accuracy and the
//! canonicalizer equivariance probe.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::nn::softmax;
use crate::rng::stream_rng;
use crate::sampling::{apply_warp, apply_warp_inverse};
use crate::warp::{Warp2d, WarpSampler};

/// Normalization of squared distances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Averaged per element.
    #[default]
    Mean,
    Sum,
}

pub fn sq_dist(a: &[f64], b: &[f64], r: Reduction) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    match r {
        Reduction::Mean if !a.is_empty() => s / a.len() as f64,
        _ => s,
    }
}

/// The `n_warps` warps drawn for image `index`.
pub fn image_warps(sampler: &WarpSampler, seed: u64, index: usize, n_warps: usize) -> Vec<Warp2d> {
    let mut rng = stream_rng(seed, index as u64);
    (0..n_warps).map(|_| sampler.sample_2d_with(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub equ_e: f64,
    /// Mean round-trip error `S⁻¹(S(I; Φ); Φ) − I` over the same pairs.
    pub interpolation_floor: f64,
    pub pairs: usize,
}

fn mean_ordered(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean of `‖S(M(I); Φ) − M(S(I; Φ))‖²` over images and sampled warps.
pub fn equivariance_error<M>(
    model: M,
    images: &[FeatureMap],
    sampler: &WarpSampler,
    n_warps: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<EquivarianceReport>
where
    M: Fn(&FeatureMap) -> Result<FeatureMap> + Sync,
{
    equivariance_error_with(|x, _| model(x), images, sampler, n_warps, seed, reduction)
}

/// As [`equivariance_error`] for models that are told the warp applied to
/// their input (the identity for the clean branch). Used for oracle
/// canonicalizers.
pub fn equivariance_error_with<M>(
    model: M,
    images: &[FeatureMap],
    sampler: &WarpSampler,
    n_warps: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<EquivarianceReport>
where
    M: Fn(&FeatureMap, &Warp2d) -> Result<FeatureMap> + Sync,
{
    if images.is_empty() || n_warps == 0 {
        return Err(Error::Usage("equivariance error needs images and warps".into()));
    }
    let id = Warp2d::identity(sampler.grid_size, sampler.grid_size);
    let per_image: Vec<(f64, f64)> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| -> Result<(f64, f64)> {
            let clean = model(img, &id)?;
            if clean.height() * clean.width() <= 1 {
                return Err(Error::Usage("equivariance error needs a spatial model output".into()));
            }
            let mut e = 0.0;
            let mut f = 0.0;
            for w in image_warps(sampler, seed, i, n_warps) {
                let warped = apply_warp(img, &w);
                let out = model(&warped, &w)?;
                let moved = apply_warp(&clean, &w);
                if !out.same_shape(&moved) {
                    return Err(Error::Shape("model output shape depends on its input".into()));
                }
                e += sq_dist(moved.data(), out.data(), reduction);
                f += sq_dist(apply_warp_inverse(&warped, &w).data(), img.data(), reduction);
            }
            Ok((e / n_warps as f64, f / n_warps as f64))
        })
        .collect::<Result<_>>()?;
    let e: Vec<f64> = per_image.iter().map(|p| p.0).collect();
    let f: Vec<f64> = per_image.iter().map(|p| p.1).collect();
    Ok(EquivarianceReport {
        equ_e: mean_ordered(&e),
        interpolation_floor: mean_ordered(&f),
        pairs: images.len() * n_warps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub inv_e: f64,
    /// Standard deviation of the per-group values.
    pub inv_e_std: f64,
    pub groups: usize,
}

/// InvE from precomputed outputs: each group is the base output followed by
/// its variants' outputs.
pub fn invariance_error_from_outputs(groups: &[Vec<Vec<f64>>], reduction: Reduction) -> Result<InvarianceReport> {
    if groups.is_empty() {
        return Err(Error::Usage("invariance error needs at least one group".into()));
    }
    let mut per = Vec::with_capacity(groups.len());
    for (g, outs) in groups.iter().enumerate() {
        if outs.len() < 2 {
            return Err(Error::Usage(format!("group {g} has no variants")));
        }
        let d: f64 = outs[1..].iter().map(|o| sq_dist(&outs[0], o, reduction)).sum();
        per.push(d / (outs.len() - 1) as f64);
    }
    let (mean, std) = mean_std(&per);
    Ok(InvarianceReport {
        inv_e: mean,
        inv_e_std: std,
        groups: groups.len(),
    })
}

/// Mean over groups and variants of `‖M(I) − M(I_s)‖²`. Each group is a base
/// image followed by its variants. With `probabilities` the outputs are
/// passed through a softmax first.
pub fn invariance_error<M>(
    model: M,
    groups: &[Vec<FeatureMap>],
    probabilities: bool,
    reduction: Reduction,
) -> Result<InvarianceReport>
where
    M: Fn(&FeatureMap) -> Result<Vec<f64>> + Sync,
{
    let outs: Vec<Vec<Vec<f64>>> = groups
        .par_iter()
        .map(|g| {
            g.iter()
                .map(|x| model(x).map(|o| if probabilities { softmax(&o) } else { o }))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    invariance_error_from_outputs(&outs, reduction)
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = mean_ordered(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub lo: f64,
    pub hi: f64,
    pub acc: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerScale {
    pub buckets: Vec<BucketAccuracy>,
    /// Samples outside every bucket.
    pub overflow: usize,
    pub overflow_acc: f64,
    /// Mean and population std of accuracy over non-empty buckets.
    pub mean: f64,
    pub std: f64,
}

/// The default scale buckets; the last one is closed on the right.
pub const DEFAULT_BUCKETS: [(f64, f64); 3] = [(0.4, 1.0), (1.0, 1.5), (1.5, 2.0)];

/// Buckets are half-open `[lo, hi)` except the last, which includes `hi`.
pub fn per_scale_accuracy(samples: &[(bool, f64)], buckets: &[(f64, f64)]) -> Result<PerScale> {
    if buckets.is_empty() {
        return Err(Error::Usage("at least one scale bucket is required".into()));
    }
    let mut hits = vec![(0usize, 0usize); buckets.len()];
    let mut over = (0usize, 0usize);
    let last = buckets.len() - 1;
    for &(ok, s) in samples {
        let slot = buckets
            .iter()
            .enumerate()
            .position(|(k, &(lo, hi))| s >= lo && (s < hi || (k == last && s == hi)));
        let h = match slot {
            Some(k) => &mut hits[k],
            None => &mut over,
        };
        h.0 += ok as usize;
        h.1 += 1;
    }
    let frac = |(c, n): (usize, usize)| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let out: Vec<BucketAccuracy> = buckets
        .iter()
        .zip(&hits)
        .map(|(&(lo, hi), &h)| BucketAccuracy {
            lo,
            hi,
            acc: frac(h),
            n: h.1,
        })
        .collect();
    let accs: Vec<f64> = out.iter().filter(|b| b.n > 0).map(|b| b.acc).collect();
    let (mean, std) = mean_std(&accs);
    Ok(PerScale {
        buckets: out,
        overflow: over.1,
        overflow_acc: frac(over),
        mean,
        std,
    })
}

/// Mean distance between the canonical images `S⁻¹(S(I; g); h(S(I; g)))`
/// and `S⁻¹(I; h(I))`. Zero for an ideal canonicalizer.
pub fn canonicalizer_equivariance_probe<C>(
    canonicalizer: C,
    images: &[FeatureMap],
    sampler: &WarpSampler,
    n_warps: usize,
    seed: u64,
    reduction: Reduction,
) -> Result<f64>
where
    C: Fn(&FeatureMap, &Warp2d) -> Result<Warp2d> + Sync,
{
    if images.is_empty() || n_warps == 0 {
        return Err(Error::Usage("probe needs images and warps".into()));
    }
    let id = Warp2d::identity(sampler.grid_size, sampler.grid_size);
    let per: Vec<f64> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| -> Result<f64> {
            let base = apply_warp_inverse(img, &canonicalizer(img, &id)?);
            let mut acc = 0.0;
            for g in image_warps(sampler, seed, i, n_warps) {
                let x = apply_warp(img, &g);
                let c = apply_warp_inverse(&x, &canonicalizer(&x, &g)?);
                acc += sq_dist(c.data(), base.data(), reduction);
            }
            Ok(acc / n_warps as f64)
        })
        .collect::<Result<_>>()?;
    Ok(mean_ordered(&per))
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub equ_e: f64,
    pub inv_e: f64,
    pub inv_e_std: f64,
    pub interpolation_floor: f64,
    pub per_scale: Vec<BucketAccuracy>,
    pub overflow: usize,
    pub acc_std: f64,
    pub seed: u64,
    pub n_warps: usize,
    pub canonicalizer: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(h: usize) -> FeatureMap {
        FeatureMap::from_fn(h, h, |x, y| (-((x - 0.4).powi(2) + (y - 0.55).powi(2)) / 0.04).exp())
    }

    #[test]
    fn identity_sampler_gives_zero() {
        let s = WarpSampler::identity_only(4);
        let imgs = vec![blob(16), blob(12)];
        let r = equivariance_error(|x| Ok(x.map(|v| v * v)), &imgs, &s, 3, 1, Reduction::Mean).unwrap();
        assert_eq!(r.equ_e, 0.0);
        assert_eq!(r.interpolation_floor, 0.0);
        let p = canonicalizer_equivariance_probe(|_, _| Ok(Warp2d::identity(3, 3)), &imgs, &s, 2, 0, Reduction::Mean)
            .unwrap();
        assert_eq!(p, 0.0);
    }

    #[test]
    fn identity_model_is_exact_and_floor_positive() {
        let s = WarpSampler::default();
        let r = equivariance_error(|x| Ok(x.clone()), &[blob(24)], &s, 4, 9, Reduction::Mean).unwrap();
        assert_eq!(r.equ_e, 0.0);
        assert!(r.interpolation_floor > 0.0);
    }

    #[test]
    fn mean_filter_matches_direct_evaluation() {
        let img = blob(10);
        let s = WarpSampler::default();
        let filt = |x: &FeatureMap| -> Result<FeatureMap> {
            let (h, w) = (x.height() as isize, x.width() as isize);
            let mut out = FeatureMap::zeros(x.height(), x.width(), 1);
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for di in -1..=1 {
                        for dj in -1..=1 {
                            let (a, b) = ((i + di).clamp(0, h - 1), (j + dj).clamp(0, w - 1));
                            acc += x.get(a as usize, b as usize, 0);
                        }
                    }
                    out.set(i as usize, j as usize, 0, acc / 9.0);
                }
            }
            Ok(out)
        };
        let r = equivariance_error(filt, std::slice::from_ref(&img), &s, 1, 4, Reduction::Sum).unwrap();
        let w = &image_warps(&s, 4, 0, 1)[0];
        let a = apply_warp(&filt(&img).unwrap(), w);
        let b = filt(&apply_warp(&img, w)).unwrap();
        let want: f64 = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum();
        assert!((r.equ_e - want).abs() < 1e-10);
        assert!(r.equ_e > 0.0);
    }

    #[test]
    fn non_spatial_output_is_rejected() {
        let r = equivariance_error(
            |_| Ok(FeatureMap::zeros(1, 1, 3)),
            &[blob(8)],
            &WarpSampler::default(),
            1,
            0,
            Reduction::Mean,
        );
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn invariance_hand_example() {
        let l0 = vec![1.0, 2.0, 0.0];
        let l1 = vec![0.0, 2.0, 1.0];
        let l2 = vec![1.0, -1.0, 0.5];
        let r = invariance_error_from_outputs(&[vec![l0, l1, l2]], Reduction::Sum).unwrap();
        assert!((r.inv_e - (2.0 + 9.25) / 2.0).abs() < 1e-12);
        assert!(invariance_error_from_outputs(&[vec![vec![1.0]]], Reduction::Sum).is_err());
        assert!(invariance_error_from_outputs(&[], Reduction::Sum).is_err());
    }

    #[test]
    fn constant_model_has_zero_invariance_error() {
        let groups = vec![vec![blob(8), blob(8).map(|v| v * 2.0)]];
        let r = invariance_error(|_| Ok(vec![0.3, 0.1]), &groups, true, Reduction::Mean).unwrap();
        assert_eq!(r.inv_e, 0.0);
    }

    #[test]
    fn planted_errors_per_bucket() {
        let mut samples = Vec::new();
        for k in 0..300 {
            let s = 0.4 + 1.6 * k as f64 / 299.0;
            let wrong = s < 1.0 && k % 4 == 0;
            samples.push((!wrong, s));
        }
        let r = per_scale_accuracy(&samples, &DEFAULT_BUCKETS).unwrap();
        let b0 = r.buckets[0];
        let planted = samples.iter().filter(|p| p.1 < 1.0 && !p.0).count();
        assert_eq!(b0.acc, 1.0 - planted as f64 / b0.n as f64);
        assert_eq!(r.buckets[1].acc, 1.0);
        assert_eq!(r.buckets[2].acc, 1.0);
        assert_eq!(r.buckets.iter().map(|b| b.n).sum::<usize>() + r.overflow, 300);
        let one = per_scale_accuracy(&samples, &[(0.0, 5.0)]).unwrap();
        let global = samples.iter().filter(|p| p.0).count() as f64 / 300.0;
        assert_eq!(one.buckets[0].acc, global);
        let perfect: Vec<_> = samples.iter().map(|p| (true, p.1)).collect();
        let r = per_scale_accuracy(&perfect, &DEFAULT_BUCKETS).unwrap();
        assert_eq!(r.std, 0.0);
        let over = per_scale_accuracy(&[(true, 2.5)], &DEFAULT_BUCKETS).unwrap();
        assert_eq!(over.overflow, 1);
    }

    #[test]
    fn identity_canonicalizer_probe_is_round_trip_distance() {
        let img = blob(16);
        let s = WarpSampler::default();
        let p = canonicalizer_equivariance_probe(
            |_, _| Ok(Warp2d::identity(4, 4)),
            std::slice::from_ref(&img),
            &s,
            2,
            3,
            Reduction::Mean,
        )
        .unwrap();
        let want: f64 = image_warps(&s, 3, 0, 2)
            .iter()
            .map(|g| apply_warp(&img, g).mean_sq_diff(&img))
            .sum::<f64>()
            / 2.0;
        assert!((p - want).abs() < 1e-15);
        let oracle = canonicalizer_equivariance_probe(
            |_, g| Ok(g.clone()),
            std::slice::from_ref(&img),
            &s,
            2,
            3,
            Reduction::Mean,
        )
        .unwrap();
        let floor = equivariance_error(|x| Ok(x.clone()), &[img], &s, 2, 3, Reduction::Mean)
            .unwrap()
            .interpolation_floor;
        assert!(oracle <= floor + 1e-15);
    }
}
