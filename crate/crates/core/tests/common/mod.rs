//! Shared helpers for the integration tests: central finite differences and
//! random instances.

#![allow(dead_code)]

use monocanon::dec::{AnalyticImage, BackwardMode, Constrainer, DecNet};
use monocanon::nn::{LayerSpec, Sequential};
use monocanon::rng::stream_rng;
use monocanon::sampling::{apply_warp, warp_backward};
use monocanon::{FeatureMap, Warp2d, WarpSampler};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;

/// `‖a − b‖ / max(‖b‖, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / n.max(1e-8)
}

/// Central differences of `f` at `x`.
pub fn central_diff(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + FD_STEP;
            let hi = f(&p);
            p[i] = x[i] - FD_STEP;
            let lo = f(&p);
            p[i] = x[i];
            (hi - lo) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn random_map<R: Rng>(rng: &mut R, h: usize, w: usize, c: usize) -> FeatureMap {
    let data = (0..h * w * c).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureMap::from_vec(h, w, c, data).unwrap()
}

/// Sum of random Gaussian blobs; a smooth image class with a small
/// interpolation floor.
pub fn blob_image<R: Rng>(rng: &mut R, size: usize) -> FeatureMap {
    AnalyticImage {
        blobs: (0..6)
            .map(|_| {
                (
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.04..0.1),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect(),
    }
    .render(size, size)
}

/// One small network per layer kind, each on a random input shape.
pub fn layer_case(kind: usize, seed: u64) -> Sequential {
    let mut rng = stream_rng(seed, 0xfd_0000 + kind as u64);
    let (h, w) = (rng.random_range(4..8), rng.random_range(4..8));
    let c = rng.random_range(1..4);
    let specs = match kind {
        0 => vec![LayerSpec::conv(c, 3, 3, rng.random_range(1..3), rng.random_range(0..2))],
        // the conv in front keeps relu inputs random but differentiable
        1 => vec![LayerSpec::conv(c, 2, 1, 1, 0), LayerSpec::Relu],
        2 => vec![LayerSpec::AdaptiveAvgPool { out_h: 3, out_w: 2 }],
        3 => vec![
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: h * w * c,
                outputs: 4,
            },
        ],
        _ => vec![LayerSpec::Flatten],
    };
    let mut net = Sequential::new((h, w, c), specs).unwrap();
    net.init_he(seed);
    let p: Vec<f64> = net
        .params()
        .data()
        .iter()
        .map(|v| v + rng.random_range(-0.1..0.1))
        .collect();
    net.set_params(&p).unwrap();
    net
}

pub const LAYER_KINDS: [&str; 5] = ["conv", "relu", "adaptive_avg_pool", "dense", "flatten"];

/// Worst relative error of parameter and input gradients of `u · net(x)`.
pub fn layer_gradient_error(net: &Sequential, seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0xfd_1000);
    let (h, w, c) = net.input_shape();
    let x = random_map(&mut rng, h, w, c);
    let (oh, ow, oc) = net.output_shape();
    let u = random_map(&mut rng, oh, ow, oc);
    let trace = net.forward(&x).unwrap();
    let (gp, gx) = net.backward(&trace, &u).unwrap();
    let loss = |n: &Sequential, x: &FeatureMap| dot(n.predict(x).unwrap().data(), u.data());
    let fx = central_diff(x.data(), |v| {
        loss(net, &FeatureMap::from_vec(h, w, c, v.to_vec()).unwrap())
    });
    let mut probe = net.clone();
    let fp = central_diff(net.params().data(), |v| {
        probe.set_params(v).unwrap();
        loss(&probe, &x)
    });
    let mut e = rel_err(gx.data(), &fx);
    if !fp.is_empty() {
        e = e.max(rel_err(&gp, &fp));
    }
    e
}

/// Relative error of `warp_backward` against differences in the source
/// pixels and the warp parameters.
pub fn warp_gradient_error(seed: u64) -> f64 {
    let mut rng = stream_rng(seed, 0xfd_2000);
    let sampler = WarpSampler::new(3, 2.0, 0.05).unwrap();
    let w = sampler.sample_2d_with(&mut rng);
    let f = random_map(&mut rng, 9, 11, 2);
    let u = random_map(&mut rng, 9, 11, 2);
    let g = warp_backward(&f, &w, &u).unwrap();
    let fx = central_diff(f.data(), |v| {
        dot(
            apply_warp(&FeatureMap::from_vec(9, 11, 2, v.to_vec()).unwrap(), &w).data(),
            u.data(),
        )
    });
    // endpoints are pinned at 0 and 1; only interior values are free
    let params = w.params();
    let free: Vec<usize> = (0..params.len())
        .filter(|&i| params[i] != 0.0 && params[i] != 1.0)
        .collect();
    let sub: Vec<f64> = free.iter().map(|&i| params[i]).collect();
    let fw = central_diff(&sub, |v| {
        let mut p = params.clone();
        for (&i, &x) in free.iter().zip(v) {
            p[i] = x;
        }
        dot(apply_warp(&f, &w.with_params(&p).unwrap()).data(), u.data())
    });
    let gw: Vec<f64> = free.iter().map(|&i| g.d_warp_values[i]).collect();
    rel_err(g.d_pixels.data(), &fx).max(rel_err(&gw, &fw))
}

fn random_dec(seed: u64) -> (DecNet, FeatureMap) {
    let mut rng = stream_rng(seed, 0xfd_3000);
    let c = Constrainer::new(2, 2, 0.05).unwrap();
    let mut dec = DecNet::new((12, 12, 1), c, (3, 4)).unwrap();
    let p: Vec<f64> = (0..dec.net().param_count())
        .map(|_| rng.random_range(-0.3..0.3))
        .collect();
    dec.net_mut().set_params(&p).unwrap();
    let img = blob_image(&mut rng, 12);
    (dec, img)
}

/// Unrolled backward over `k` applications of `H` from the detached fixed
/// point, against differences of the same composition.
pub fn dec_unroll_gradient_error(k: usize, seed: u64) -> f64 {
    let (dec, img) = random_dec(seed);
    let mut rng = stream_rng(seed, 0xfd_4000);
    let anderson = monocanon::dec::AndersonConfig::default();
    let mode = BackwardMode::Unroll { k };
    let tape = dec.forward_train(&img, &anderson, mode).unwrap();
    let u: Vec<f64> = (0..tape.raw.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = dec.backward(&tape, mode, &u).unwrap();
    let z = tape.fixed_point.clone();
    let unrolled = |d: &DecNet, img: &FeatureMap| {
        let mut r = z.clone();
        for _ in 0..k {
            r = d.h_apply(&r, img).unwrap();
        }
        dot(&r, &u)
    };
    let mut probe = dec.clone();
    let fp = central_diff(dec.net().params().data(), |v| {
        probe.net_mut().set_params(v).unwrap();
        unrolled(&probe, &img)
    });
    let fx = central_diff(img.data(), |v| {
        unrolled(&dec, &FeatureMap::from_vec(12, 12, 1, v.to_vec()).unwrap())
    });
    rel_err(&grads.params, &fp).max(rel_err(grads.image.data(), &fx))
}

/// Warp of `img` drawn from `sampler`, with the image.
pub fn warped_pair<R: Rng>(rng: &mut R, sampler: &WarpSampler, size: usize) -> (FeatureMap, Warp2d) {
    (blob_image(rng, size), sampler.sample_2d_with(rng))
}
