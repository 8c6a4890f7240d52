use serde::{Deserialize, Serialize};

use super::Sequential;
use crate::error::{Error, Result};
use crate::image::FeatureMap;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `(loss, d loss / d logits)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Weight of the task loss.
    pub task_weight: f64,
    /// Weight `λ` of the auxiliary consistency loss (InvL/EquL).
    pub aux_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 4,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            task_weight: 1.0,
            aux_weight: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Usage(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be positive".into()));
        }
        if !(self.task_weight >= 0.0 && self.aux_weight >= 0.0) {
            return Err(Error::Usage("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// SGD or Adam (β = 0.9/0.999, eps = 1e-8) over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(kind: OptimizerKind, lr: f64, n_params: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Self {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Optimizer(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.lr == 0.0 {
            return Ok(());
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                if self.m.len() != params.len() {
                    return Err(Error::Optimizer("optimizer state has the wrong size".into()));
                }
                self.t += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.t as i32);
                let c2 = 1.0 - Self::BETA2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                }
            }
        }
        Ok(())
    }
}

impl Sequential {
    /// One optimizer step on the mean softmax cross-entropy of a labelled
    /// batch. Returns the mean loss before the update.
    pub fn train_step(&mut self, opt: &mut Optimizer, batch: &[(FeatureMap, usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let net = &*self;
        let (loss, mut grads) = net.batch_gradient(batch.len(), |i| {
            let (x, y) = &batch[i];
            let trace = net.forward(x)?;
            let (l, g) = softmax_cross_entropy(trace.output.data(), *y);
            if !l.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {l} at batch index {i} (label {y})"
                )));
            }
            let up = FeatureMap::from_vec(1, 1, g.len(), g)?;
            let (pg, _) = net.backward(&trace, &up)?;
            Ok((l, pg))
        })?;
        let n = batch.len() as f64;
        let loss = loss / n;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss {loss} on a batch of {} (max |param| = {:.3e})",
                batch.len(),
                self.params().data().iter().fold(0.0f64, |a, v| a.max(v.abs()))
            )));
        }
        for g in &mut grads {
            *g /= n;
        }
        opt.step(self.params_mut().data_mut(), &grads)?;
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn tiny() -> Sequential {
        let mut net = Sequential::new(
            (4, 4, 1),
            vec![
                LayerSpec::conv(1, 3, 3, 1, 1),
                LayerSpec::Relu,
                LayerSpec::AdaptiveAvgPool { out_h: 2, out_w: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 12, outputs: 2 },
            ],
        )
        .unwrap();
        net.init_he(1);
        net
    }

    fn batch() -> Vec<(FeatureMap, usize)> {
        vec![
            (FeatureMap::from_fn(4, 4, |x, _| x), 0),
            (FeatureMap::from_fn(4, 4, |_, y| y), 1),
        ]
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (l, g) = softmax_cross_entropy(&[1.0, -2.0, 0.5], 2);
        assert!(l >= 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-15);
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut net = tiny();
        let before = net.params().data().to_vec();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, net.param_count());
        net.train_step(&mut opt, &batch()).unwrap();
        assert_eq!(net.params().data(), &before[..]);
    }

    #[test]
    fn overfits_two_samples() {
        let mut net = tiny();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, net.param_count());
        let mut loss = f64::INFINITY;
        for _ in 0..500 {
            loss = net.train_step(&mut opt, &batch()).unwrap();
            if loss < 1e-2 {
                break;
            }
        }
        assert!(loss < 1e-2, "loss {loss}");
    }

    #[test]
    fn training_is_bit_reproducible() {
        let run = || {
            let mut net = tiny();
            let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, net.param_count());
            for _ in 0..20 {
                net.train_step(&mut opt, &batch()).unwrap();
            }
            net.params().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut net = tiny();
        net.params_mut().data_mut()[0] = f64::NAN;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, net.param_count());
        assert!(matches!(net.train_step(&mut opt, &batch()), Err(Error::Training(_))));
    }
}
