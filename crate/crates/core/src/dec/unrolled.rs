//! Canonicalization by a fixed number of differentiable gradient-descent
//! steps on a network energy, trained by exact reverse mode through every
//! step. This is the memory- and time-hungry alternative to the DEC.
//!
//! Reverse mode through `Φ_{t+1} = Φ_t − η ∇E(Φ_t; θ)` needs two second
//! derivatives per step: the Hessian of `E` in `Φ` and the mixed `Φ, θ`
//! block. The energy network is piecewise linear, so its input Hessian
//! vanishes almost everywhere and the curvature comes from the constrain map
//! and the bilinear sampler.

use super::constrain::Constrainer;
use super::energy::EnergyNet;
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::nn::Trace;
use crate::sampling::SampleGrid;
use crate::warp::Direction;

#[derive(Debug, Clone)]
pub struct UnrolledGd {
    pub energy: EnergyNet,
    pub constrainer: Constrainer,
    pub steps: usize,
    pub lr: f64,
}

struct GdStep {
    raw: Vec<f64>,
    trace: Trace,
    adjoints: Vec<FeatureMap>,
    /// `∇_J E` at the unwarped image.
    s: FeatureMap,
    /// `∇_values E`.
    d_values: Vec<f64>,
}

pub struct UnrolledTape {
    source: FeatureMap,
    steps: Vec<GdStep>,
    pub raw: Vec<f64>,
}

impl UnrolledTape {
    /// Heap bytes held by recorded activations and adjoints.
    pub fn bytes(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.trace.bytes() + 8 * (s.adjoints.iter().map(FeatureMap::len).sum::<usize>() + s.s.len()))
            .sum()
    }
}

impl UnrolledGd {
    fn grid(&self, raw: &[f64], img: &FeatureMap) -> Result<SampleGrid> {
        let w = self.constrainer.warp(raw)?;
        Ok(SampleGrid::build(&w, Direction::Forward, img.height(), img.width()))
    }

    /// Runs the descent from the identity, recording every step.
    pub fn forward(&self, img: &FeatureMap) -> Result<UnrolledTape> {
        let mut raw = vec![0.0; self.constrainer.raw_len()];
        let mut steps = Vec::with_capacity(self.steps);
        let one = FeatureMap::filled(1, 1, 1, 1.0);
        for _ in 0..self.steps {
            let grid = self.grid(&raw, img)?;
            let j = grid.sample(img);
            let trace = self.energy.net().forward(&j)?;
            let (_, s, adjoints) = self.energy.net().backward_with_adjoints(&trace, &one, true)?;
            let n_values = 2 * (self.constrainer.grid_m + 1) * (self.constrainer.grid_n + 1);
            let d_values = grid.backward(img, &s, n_values, false).d_warp_values;
            let g = self.constrainer.backward(&raw, &d_values)?;
            let next: Vec<f64> = raw.iter().zip(&g).map(|(r, d)| r - self.lr * d).collect();
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Optimizer(
                    "unrolled descent produced a non-finite iterate".into(),
                ));
            }
            steps.push(GdStep {
                raw: std::mem::replace(&mut raw, next),
                trace,
                adjoints,
                s,
                d_values,
            });
        }
        Ok(UnrolledTape {
            source: img.clone(),
            steps,
            raw,
        })
    }

    /// Gradient with respect to the energy parameters of a loss with
    /// upstream `d_raw` on the final iterate.
    pub fn backward(&self, tape: &UnrolledTape, d_raw: &[f64]) -> Result<Vec<f64>> {
        let img = &tape.source;
        let c = img.channels();
        let src = img.data();
        let net = self.energy.net();
        let mut d_theta = vec![0.0; net.param_count()];
        let mut u = d_raw.to_vec();
        for step in tape.steps.iter().rev() {
            let grid = self.grid(&step.raw, img)?;
            let cu = self.constrainer.jvp(&step.raw, &u)?;
            let mut dj = FeatureMap::zeros(img.height(), img.width(), c);
            let mut vbar = vec![0.0; cu.len()];
            let s = step.s.data();
            for (p, t) in grid.taps.iter().enumerate() {
                let ax: f64 = t.dqx.iter().map(|&(k, d)| d * cu[k]).sum();
                let ay: f64 = t.dqy.iter().map(|&(k, d)| d * cu[k]).sum();
                let mut w = 0.0;
                for ch in 0..c {
                    let mut tangent = 0.0;
                    let mut curv = 0.0;
                    for k in 0..4 {
                        let f = src[t.idx[k] * c + ch];
                        tangent += (t.grad_x[k] * ax + t.grad_y[k] * ay) * f;
                        curv += t.cross[k] * f;
                    }
                    dj.data_mut()[p * c + ch] = tangent;
                    w += s[p * c + ch] * curv;
                }
                if w != 0.0 {
                    for &(k, d) in &t.dqx {
                        vbar[k] += w * ay * d;
                    }
                    for &(k, d) in &t.dqy {
                        vbar[k] += w * ax * d;
                    }
                }
            }
            let mut hu = self.constrainer.backward(&step.raw, &vbar)?;
            let hc = self.constrainer.hvp(&step.raw, &step.d_values, &u)?;
            for (a, b) in hu.iter_mut().zip(&hc) {
                *a += b;
            }
            let tangents = net.jvp(&step.trace, &dj)?;
            let mixed = net.weight_grads(&tangents[..tangents.len() - 1], &step.adjoints);
            for (a, b) in d_theta.iter_mut().zip(&mixed) {
                *a -= self.lr * b;
            }
            for (a, b) in u.iter_mut().zip(&hu) {
                *a -= self.lr * b;
            }
        }
        Ok(d_theta)
    }
}
