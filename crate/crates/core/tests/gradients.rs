mod common;

use common::*;
use monocanon::dec::{AndersonConfig, BackwardMode, Constrainer, DecNet};
use monocanon::rng::stream_rng;
use rand::Rng;

const INSTANCES: u64 = 20;

#[test]
fn every_layer_kind_matches_central_differences() {
    for (kind, name) in LAYER_KINDS.iter().enumerate() {
        for seed in 0..INSTANCES {
            let net = layer_case(kind, seed);
            let e = layer_gradient_error(&net, seed);
            assert!(e < 1e-3, "{name} seed {seed}: relative error {e:.3e}");
        }
    }
}

#[test]
fn warp_backward_matches_central_differences() {
    for seed in 0..INSTANCES {
        let e = warp_gradient_error(seed);
        assert!(e < 1e-3, "seed {seed}: relative error {e:.3e}");
    }
}

#[test]
fn dec_unroll_backward_matches_central_differences() {
    for k in [1, 3] {
        for seed in 0..INSTANCES {
            let e = dec_unroll_gradient_error(k, seed);
            assert!(e < 1e-3, "unroll {k} seed {seed}: relative error {e:.3e}");
        }
    }
}

#[test]
fn phantom_gradient_is_a_descent_direction() {
    let mut agree = 0;
    let trials = 100;
    for seed in 0..trials {
        let mut rng = stream_rng(seed, 0xca_0000);
        let c = Constrainer::new(2, 2, 0.05).unwrap();
        let mut dec = DecNet::new((12, 12, 1), c, (3, 4)).unwrap();
        let p: Vec<f64> = (0..dec.net().param_count())
            .map(|_| rng.random_range(-0.2..0.2))
            .collect();
        dec.net_mut().set_params(&p).unwrap();
        let img = blob_image(&mut rng, 12);
        let up: Vec<f64> = (0..c.raw_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cfg = AndersonConfig::default();
        let g = |mode| {
            let t = dec.forward_train(&img, &cfg, mode).unwrap();
            dec.backward(&t, mode, &up).unwrap().params
        };
        let a = g(BackwardMode::Phantom1);
        let b = g(BackwardMode::Unroll { k: 5 });
        if dot(&a, &b) > 0.0 {
            agree += 1;
        }
    }
    assert!(agree * 100 >= 95 * trials, "{agree}/{trials} positive inner products");
}
