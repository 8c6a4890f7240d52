//! A small reverse-mode network kernel: sequential stacks of conv, relu,
//! adaptive average pooling, flatten and dense layers over [`FeatureMap`]s.
//!
//! All parameters of a network live in one flat vector (per layer: weights,
//! then biases), so gradients, optimizer state and finite-difference checks
//! all share that layout.

mod checkpoint;
mod layers;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use layers::LayerSpec;
pub use train::{softmax, softmax_cross_entropy, Optimizer, OptimizerKind, TrainConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::FeatureMap;
use layers::Shape;

/// Flat parameter vector with a version stamp that changes on every write.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    data: Vec<f64>,
    version: u64,
}

impl NetParams {
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access bumps the version, invalidating outstanding traces.
    pub fn data_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.data
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    w: usize,
    b: usize,
    w_len: usize,
    b_len: usize,
}

/// Sequential network for a fixed input shape.
#[derive(Debug, Clone)]
pub struct Sequential {
    specs: Vec<LayerSpec>,
    shapes: Vec<Shape>,
    slots: Vec<Slot>,
    params: NetParams,
}

/// Activations recorded by [`Sequential::forward`]; `inputs[k]` is the input
/// of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub inputs: Vec<FeatureMap>,
    pub output: FeatureMap,
    version: u64,
}

impl Trace {
    /// Approximate heap footprint of the recorded activations in bytes.
    pub fn bytes(&self) -> usize {
        8 * (self.inputs.iter().map(FeatureMap::len).sum::<usize>() + self.output.len())
    }
}

impl Sequential {
    /// Validates the shape chain and zero-initializes all parameters.
    pub fn new(input: (usize, usize, usize), specs: Vec<LayerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Structural("network needs at least one layer".into()));
        }
        if input.0 == 0 || input.1 == 0 || input.2 == 0 {
            return Err(Error::Structural("input dimensions must be positive".into()));
        }
        let mut shapes = vec![input];
        let mut slots = Vec::with_capacity(specs.len());
        let mut off = 0;
        for (k, s) in specs.iter().enumerate() {
            let next = s
                .output_shape(*shapes.last().expect("nonempty"))
                .map_err(|e| Error::Structural(format!("layer {k}: {e}")))?;
            shapes.push(next);
            let (w_len, b_len) = (s.weight_len(), s.bias_len());
            slots.push(Slot {
                w: off,
                b: off + w_len,
                w_len,
                b_len,
            });
            off += w_len + b_len;
        }
        Ok(Self {
            specs,
            shapes,
            slots,
            params: NetParams {
                data: vec![0.0; off],
                version: 0,
            },
        })
    }

    /// He-normal weights for every parametric layer, zero biases.
    pub fn init_he(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = self.specs.clone();
        let slots = self.slots.clone();
        let data = self.params.data_mut();
        for (s, slot) in specs.iter().zip(&slots) {
            if slot.w_len == 0 {
                continue;
            }
            let std = (2.0 / s.fan_in() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            for v in &mut data[slot.w..slot.w + slot.w_len] {
                *v = normal.sample(&mut rng);
            }
            data[slot.b..slot.b + slot.b_len].fill(0.0);
        }
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.shapes[0]
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        *self.shapes.last().expect("nonempty")
    }

    /// Shape entering layer `k` (`k = len` gives the output shape).
    pub fn shape_at(&self, k: usize) -> (usize, usize, usize) {
        self.shapes[k]
    }

    pub fn params(&self) -> &NetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut NetParams {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Replaces all parameters; the length must match.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::Structural(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.data_mut().copy_from_slice(values);
        Ok(())
    }

    /// `(weight_range, bias_range)` of layer `k` in the flat vector.
    pub fn layer_ranges(&self, k: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let s = self.slots[k];
        (s.w..s.w + s.w_len, s.b..s.b + s.b_len)
    }

    fn weight(&self, k: usize) -> &[f64] {
        let s = self.slots[k];
        &self.params.data[s.w..s.w + s.w_len]
    }

    fn bias(&self, k: usize) -> &[f64] {
        let s = self.slots[k];
        &self.params.data[s.b..s.b + s.b_len]
    }

    fn check_input(&self, x: &FeatureMap) -> Result<()> {
        if x.shape() != self.shapes[0] {
            return Err(Error::Structural(format!(
                "network expects input {:?}, got {:?}",
                self.shapes[0],
                x.shape()
            )));
        }
        Ok(())
    }

    /// Output without recording activations.
    pub fn predict(&self, x: &FeatureMap) -> Result<FeatureMap> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for k in 0..self.specs.len() {
            cur = layers::forward(
                &self.specs[k],
                self.weight(k),
                Some(self.bias(k)),
                &cur,
                self.shapes[k + 1],
                None,
            );
        }
        Ok(cur)
    }

    /// Forward pass recording what [`Sequential::backward`] needs.
    pub fn forward(&self, x: &FeatureMap) -> Result<Trace> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.specs.len());
        let mut cur = x.clone();
        for k in 0..self.specs.len() {
            let next = layers::forward(
                &self.specs[k],
                self.weight(k),
                Some(self.bias(k)),
                &cur,
                self.shapes[k + 1],
                None,
            );
            inputs.push(std::mem::replace(&mut cur, next));
        }
        Ok(Trace {
            inputs,
            output: cur,
            version: self.params.version,
        })
    }

    fn check_trace(&self, trace: &Trace, upstream: &FeatureMap) -> Result<()> {
        if trace.version != self.params.version || trace.inputs.len() != self.specs.len() {
            return Err(Error::Structural("trace was recorded with different parameters".into()));
        }
        if upstream.shape() != self.output_shape() {
            return Err(Error::Structural(format!(
                "upstream {:?} does not match output {:?}",
                upstream.shape(),
                self.output_shape()
            )));
        }
        Ok(())
    }

    /// Reverse pass: `(parameter gradient, input gradient)`.
    pub fn backward(&self, trace: &Trace, upstream: &FeatureMap) -> Result<(Vec<f64>, FeatureMap)> {
        let (g, dx, _) = self.backward_with_adjoints(trace, upstream, false)?;
        Ok((g, dx))
    }

    /// Reverse pass that can also return the adjoint of every layer output
    /// (`adjoints[k]` belongs to the output of layer `k`).
    pub fn backward_with_adjoints(
        &self,
        trace: &Trace,
        upstream: &FeatureMap,
        keep_adjoints: bool,
    ) -> Result<(Vec<f64>, FeatureMap, Vec<FeatureMap>)> {
        self.check_trace(trace, upstream)?;
        let mut grads = vec![0.0; self.params.len()];
        let n = self.specs.len();
        let mut adjoints = Vec::new();
        let mut dy = upstream.clone();
        for k in (0..n).rev() {
            let slot = self.slots[k];
            let (gw, rest) = grads[slot.w..].split_at_mut(slot.w_len);
            let gb = &mut rest[..slot.b_len];
            let dx = layers::backward(
                &self.specs[k],
                self.weight(k),
                &trace.inputs[k],
                &dy,
                Some(gw),
                Some(gb),
                true,
            )
            .expect("requested");
            if keep_adjoints {
                adjoints.push(std::mem::replace(&mut dy, dx));
            } else {
                dy = dx;
            }
        }
        adjoints.reverse();
        Ok((grads, dy, adjoints))
    }

    /// Forward-mode derivative along `dx` at the recorded point. Returns the
    /// tangent entering every layer followed by the output tangent.
    pub fn jvp(&self, trace: &Trace, dx: &FeatureMap) -> Result<Vec<FeatureMap>> {
        if trace.version != self.params.version {
            return Err(Error::Structural("trace was recorded with different parameters".into()));
        }
        self.check_input(dx)?;
        let mut tangents = Vec::with_capacity(self.specs.len() + 1);
        tangents.push(dx.clone());
        for k in 0..self.specs.len() {
            let t = layers::forward(
                &self.specs[k],
                self.weight(k),
                None,
                &tangents[k],
                self.shapes[k + 1],
                Some(&trace.inputs[k]),
            );
            tangents.push(t);
        }
        Ok(tangents)
    }

    /// Weight gradient formula evaluated on arbitrary layer inputs and
    /// output adjoints; biases get no contribution. Used for mixed second
    /// derivatives where `inputs` are tangents and `adjoints` are primal.
    pub fn weight_grads(&self, inputs: &[FeatureMap], adjoints: &[FeatureMap]) -> Vec<f64> {
        let mut grads = vec![0.0; self.params.len()];
        for k in 0..self.specs.len() {
            let slot = self.slots[k];
            if slot.w_len == 0 {
                continue;
            }
            layers::backward(
                &self.specs[k],
                self.weight(k),
                &inputs[k],
                &adjoints[k],
                Some(&mut grads[slot.w..slot.w + slot.w_len]),
                None,
                false,
            );
        }
        grads
    }

    /// Sums per-sample `(loss, gradient)` pairs in index order, evaluating
    /// samples in parallel.
    pub fn batch_gradient<F>(&self, n: usize, per_sample: F) -> Result<(f64, Vec<f64>)>
    where
        F: Fn(usize) -> Result<(f64, Vec<f64>)> + Sync,
    {
        let parts: Vec<Result<(f64, Vec<f64>)>> = (0..n).into_par_iter().map(&per_sample).collect();
        let mut loss = 0.0;
        let mut grads = vec![0.0; self.params.len()];
        for p in parts {
            let (l, g) = p?;
            loss += l;
            for (a, b) in grads.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss, grads))
    }
}
