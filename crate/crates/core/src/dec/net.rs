use serde::{Deserialize, Serialize};

use super::anderson::{anderson, AndersonConfig, SolveStats};
use super::constrain::Constrainer;
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::nn::{LayerSpec, Sequential, Trace};
use crate::sampling::{apply_warp_inverse, warp_inverse_backward};
use crate::warp::Warp2d;

/// How training gradients are taken through the fixed point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BackwardMode {
    /// Differentiate one application of `H` at the detached fixed point.
    Phantom1,
    /// Differentiate `K` recorded applications of `H` from the detached
    /// fixed point.
    Unroll { k: usize },
}

impl BackwardMode {
    pub fn steps(&self) -> usize {
        match *self {
            BackwardMode::Phantom1 => 1,
            BackwardMode::Unroll { k } => k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CanonicalizerOutput {
    pub warp: Warp2d,
    pub raw: Vec<f64>,
    pub stats: SolveStats,
}

/// The fixed-point map `H_ψ(Φ, I)`: unwarp the input by `constrain(Φ)`, run
/// two strided conv layers, pool to the warp grid and read out raw warp
/// parameters with a linear head.
#[derive(Debug, Clone)]
pub struct DecNet {
    net: Sequential,
    constrainer: Constrainer,
}

struct Step {
    raw_in: Vec<f64>,
    warp_in: Warp2d,
    trace: Trace,
}

/// State recorded for the training backward pass.
pub struct DecTape {
    mode: BackwardMode,
    source: FeatureMap,
    pub fixed_point: Vec<f64>,
    /// `H^K` applied to the fixed point; the warp used downstream in training.
    pub raw: Vec<f64>,
    pub warp: Warp2d,
    pub stats: SolveStats,
    steps: Vec<Step>,
}

impl DecTape {
    pub fn mode(&self) -> BackwardMode {
        self.mode
    }

    /// Heap bytes held by recorded activations.
    pub fn bytes(&self) -> usize {
        self.steps.iter().map(|s| s.trace.bytes()).sum()
    }
}

#[derive(Debug, Clone)]
pub struct DecGrads {
    pub params: Vec<f64>,
    pub image: FeatureMap,
}

impl DecNet {
    /// Builds the network for inputs of `shape` with conv widths `widths`.
    /// All parameters start at zero, so the untrained map is constant zero
    /// and the canonical warp is the identity.
    pub fn new(shape: (usize, usize, usize), constrainer: Constrainer, widths: (usize, usize)) -> Result<Self> {
        let p = constrainer.raw_len();
        let (gm, gn) = (constrainer.grid_m, constrainer.grid_n);
        let specs = vec![
            LayerSpec::conv(shape.2, widths.0, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::conv(widths.0, widths.1, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::AdaptiveAvgPool { out_h: gm, out_w: gn },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: gm * gn * widths.1,
                outputs: p,
            },
        ];
        Ok(Self {
            net: Sequential::new(shape, specs)?,
            constrainer,
        })
    }

    /// He-initialized convs with a zero head: still the identity map at
    /// start, but with informative features for the head to learn from.
    pub fn init(&mut self, seed: u64) {
        self.net.init_he(seed);
        let last = self.net.specs().len() - 1;
        let (w, b) = self.net.layer_ranges(last);
        let data = self.net.params_mut().data_mut();
        data[w].fill(0.0);
        data[b].fill(0.0);
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    pub fn constrainer(&self) -> &Constrainer {
        &self.constrainer
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.net.input_shape()
    }

    fn raw_map(&self, raw: &[f64]) -> Result<FeatureMap> {
        FeatureMap::from_vec(1, 1, raw.len(), raw.to_vec())
    }

    /// One application of `H`: the next raw iterate.
    pub fn h_apply(&self, raw: &[f64], img: &FeatureMap) -> Result<Vec<f64>> {
        let w = self.constrainer.warp(raw)?;
        let x = apply_warp_inverse(img, &w);
        Ok(self.net.predict(&x)?.into_data())
    }

    /// Anderson solve from `phi0` (zeros, the identity, when `None`).
    pub fn solve(&self, img: &FeatureMap, phi0: Option<&[f64]>, cfg: &AndersonConfig) -> Result<CanonicalizerOutput> {
        let zeros = vec![0.0; self.constrainer.raw_len()];
        let z0 = phi0.unwrap_or(&zeros);
        if z0.len() != zeros.len() {
            return Err(Error::Shape(format!(
                "phi0 has {} entries, expected {}",
                z0.len(),
                zeros.len()
            )));
        }
        let (raw, stats) = anderson(|z| self.h_apply(z, img), z0, cfg)?;
        Ok(CanonicalizerOutput {
            warp: self.constrainer.warp(&raw)?,
            raw,
            stats,
        })
    }

    /// Solves without recording, then applies `H` `mode.steps()` more times
    /// with recording.
    pub fn forward_train(&self, img: &FeatureMap, cfg: &AndersonConfig, mode: BackwardMode) -> Result<DecTape> {
        if mode.steps() == 0 {
            return Err(Error::Structural("unroll depth must be >= 1".into()));
        }
        let sol = self.solve(img, None, cfg)?;
        let mut raw = sol.raw.clone();
        let mut steps = Vec::with_capacity(mode.steps());
        for _ in 0..mode.steps() {
            let warp_in = self.constrainer.warp(&raw)?;
            let x = apply_warp_inverse(img, &warp_in);
            let trace = self.net.forward(&x)?;
            let next = trace.output.data().to_vec();
            steps.push(Step {
                raw_in: std::mem::replace(&mut raw, next),
                warp_in,
                trace,
            });
        }
        Ok(DecTape {
            mode,
            source: img.clone(),
            fixed_point: sol.raw,
            warp: self.constrainer.warp(&raw)?,
            raw,
            stats: sol.stats,
            steps,
        })
    }

    /// Gradients of a loss with upstream `d_raw` on `tape.raw` with respect
    /// to the network parameters and the input image.
    pub fn backward(&self, tape: &DecTape, mode: BackwardMode, d_raw: &[f64]) -> Result<DecGrads> {
        if mode != tape.mode || tape.steps.len() != mode.steps() {
            return Err(Error::Structural(format!(
                "backward mode {mode:?} does not match recorded {:?}",
                tape.mode
            )));
        }
        if d_raw.len() != self.constrainer.raw_len() {
            return Err(Error::Shape("upstream raw gradient has the wrong length".into()));
        }
        let img_shape = self.net.input_shape();
        let mut d_img = FeatureMap::zeros(img_shape.0, img_shape.1, img_shape.2);
        let mut d_params = vec![0.0; self.net.param_count()];
        let mut up = d_raw.to_vec();
        for (k, step) in tape.steps.iter().enumerate().rev() {
            let (g, d_x) = self.net.backward(&step.trace, &self.raw_map(&up)?)?;
            for (a, b) in d_params.iter_mut().zip(&g) {
                *a += b;
            }
            let wg = warp_inverse_backward(&tape.source, &step.warp_in, &d_x)?;
            d_img.add_scaled(&wg.d_pixels, 1.0);
            if k > 0 {
                up = self.constrainer.backward(&step.raw_in, &wg.d_warp_values)?;
            }
        }
        Ok(DecGrads {
            params: d_params,
            image: d_img,
        })
    }

    /// Backward from a gradient on the output warp values.
    pub fn backward_from_warp(&self, tape: &DecTape, mode: BackwardMode, d_values: &[f64]) -> Result<DecGrads> {
        let d_raw = self.constrainer.backward(&tape.raw, d_values)?;
        self.backward(tape, mode, &d_raw)
    }
}
