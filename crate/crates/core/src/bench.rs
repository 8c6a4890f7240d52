//! Training-step cost of the two canonicalizers at equal batch size: the
//! DEC (a fixed number of Anderson iterations, then one differentiated
//! application) against gradient descent on a learned energy unrolled for
//! a fixed number of steps and differentiated exactly.
//!
//! Both share one conv trunk, so the difference is the solver alone.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::measure_peak;
use crate::dec::{AndersonConfig, BackwardMode, Constrainer, DecNet, EnergyNet, ResidualNorm, UnrolledGd};
use crate::error::Result;
use crate::image::FeatureMap;
use crate::nn::{LayerSpec, Sequential};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub seed: u64,
    pub batch: usize,
    pub input: (usize, usize, usize),
    pub widths: (usize, usize),
    pub grid: usize,
    pub min_segment: f64,
    /// Anderson iterations `j` of the DEC, run without early stopping.
    pub dec_iters: usize,
    pub gd_steps: usize,
    pub gd_lr: f64,
    /// Timed repetitions; the median is reported.
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch: 10,
            input: (64, 64, 1),
            widths: (64, 128),
            grid: 4,
            min_segment: 0.02,
            dec_iters: 10,
            gd_steps: 10,
            gd_lr: 0.1,
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodCost {
    /// Median wall time of one forward + backward training step per batch.
    pub seconds_per_batch: f64,
    /// Peak heap growth during the step; `None` without a tracking allocator.
    pub peak_bytes: Option<usize>,
    /// Bytes of recorded activations held for the backward pass.
    pub tape_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub dec: MethodCost,
    pub unrolled_gd: MethodCost,
    pub time_ratio: f64,
    pub memory_ratio: Option<f64>,
    pub tape_ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn timed<F: FnMut() -> Result<usize>>(repeats: usize, mut step: F) -> Result<MethodCost> {
    let mut times = Vec::with_capacity(repeats);
    let mut peak = None;
    let mut tape = 0;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let (r, p) = measure_peak(&mut step);
        times.push(t.elapsed().as_secs_f64());
        tape = r?;
        peak = match (peak, p) {
            (Some(a), Some(b)) => Some(usize::max(a, b)),
            (None, b) => b,
            (a, None) => a,
        };
    }
    Ok(MethodCost {
        seconds_per_batch: median(times),
        peak_bytes: peak,
        tape_bytes: tape,
    })
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    let mut rng = stream_rng(cfg.seed, 0xbe_0000);
    let (h, w, c) = cfg.input;
    let batch: Vec<FeatureMap> = (0..cfg.batch)
        .map(|_| {
            let data = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
            FeatureMap::from_vec(h, w, c, data)
        })
        .collect::<Result<_>>()?;
    let constrainer = Constrainer::new(cfg.grid, cfg.grid, cfg.min_segment)?;
    let mut dec = DecNet::new(cfg.input, constrainer, cfg.widths)?;
    dec.net_mut().init_he(cfg.seed);
    let trunk = Sequential::new(
        cfg.input,
        vec![
            LayerSpec::conv(c, cfg.widths.0, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::conv(cfg.widths.0, cfg.widths.1, 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::AdaptiveAvgPool { out_h: 1, out_w: 1 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: cfg.widths.1,
                outputs: 1,
            },
        ],
    )?;
    let mut energy_net = trunk;
    energy_net.init_he(cfg.seed);
    let gd = UnrolledGd {
        energy: EnergyNet::from_net(energy_net)?,
        constrainer,
        steps: cfg.gd_steps,
        lr: cfg.gd_lr,
    };
    let anderson = AndersonConfig {
        max_iters: cfg.dec_iters,
        tol: f64::MIN_POSITIVE,
        norm: ResidualNorm::Absolute,
        ..AndersonConfig::default()
    };
    let upstream = vec![1.0; constrainer.raw_len()];
    let dec_cost = timed(cfg.repeats, || {
        let tapes = batch
            .iter()
            .map(|img| dec.forward_train(img, &anderson, BackwardMode::Phantom1))
            .collect::<Result<Vec<_>>>()?;
        for t in &tapes {
            dec.backward(t, BackwardMode::Phantom1, &upstream)?;
        }
        Ok(tapes.iter().map(|t| t.bytes()).sum())
    })?;
    let gd_cost = timed(cfg.repeats, || {
        let tapes = batch.iter().map(|img| gd.forward(img)).collect::<Result<Vec<_>>>()?;
        for t in &tapes {
            gd.backward(t, &upstream)?;
        }
        Ok(tapes.iter().map(|t| t.bytes()).sum())
    })?;
    Ok(BenchReport {
        config: cfg.clone(),
        time_ratio: dec_cost.seconds_per_batch / gd_cost.seconds_per_batch,
        memory_ratio: match (dec_cost.peak_bytes, gd_cost.peak_bytes) {
            (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
            _ => None,
        },
        tape_ratio: dec_cost.tape_bytes as f64 / gd_cost.tape_bytes.max(1) as f64,
        dec: dec_cost,
        unrolled_gd: gd_cost,
    })
}
