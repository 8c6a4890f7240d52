//! Latent canonicalization: conv blocks wrapped as `S(M_k(S⁻¹(F_k; Φ_k)); Φ_k)`
//! (equivariant) or `M_k(S⁻¹(F_k; Φ_k))` (invariant), with `Φ_k` produced by a
//! per-layer canonicalizer.

use serde::{Deserialize, Serialize};

use crate::dec::{AndersonConfig, BackwardMode, DecNet, DecTape, EnergyNet};
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::nn::{load_checkpoint, save_checkpoint, softmax_cross_entropy, LayerSpec, Sequential, Trace};
use crate::sampling::{apply_warp, apply_warp_inverse, warp_backward, warp_inverse_backward};
use crate::warp::Warp2d;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterMode {
    Equivariant,
    Invariant,
}

#[derive(Debug, Clone)]
pub enum Canonicalizer {
    /// Bare layer.
    None,
    /// Fixed warp.
    Oracle(Warp2d),
    Dec(DecNet),
    /// Argmin of an energy over a fixed candidate set.
    Vanilla {
        energy: EnergyNet,
        candidates: Vec<Warp2d>,
    },
    /// Reuse the warp of the nearest earlier canonicalizing layer.
    Shared,
}

impl Canonicalizer {
    pub fn kind(&self) -> &'static str {
        match self {
            Canonicalizer::None => "none",
            Canonicalizer::Oracle(_) => "oracle",
            Canonicalizer::Dec(_) => "dec",
            Canonicalizer::Vanilla { .. } => "vanilla",
            Canonicalizer::Shared => "shared",
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdaptedLayer {
    pub canonicalizer: Canonicalizer,
    pub mode: AdapterMode,
}

impl AdaptedLayer {
    pub fn bare() -> Self {
        Self {
            canonicalizer: Canonicalizer::None,
            mode: AdapterMode::Equivariant,
        }
    }

    pub fn equivariant(canonicalizer: Canonicalizer) -> Self {
        Self {
            canonicalizer,
            mode: AdapterMode::Equivariant,
        }
    }

    pub fn invariant(canonicalizer: Canonicalizer) -> Self {
        Self {
            canonicalizer,
            mode: AdapterMode::Invariant,
        }
    }

    fn wraps(&self) -> bool {
        !matches!(self.canonicalizer, Canonicalizer::None)
    }
}

/// Conv blocks, each optionally adapted, followed by a classification head.
#[derive(Debug, Clone)]
pub struct AdaptedNetwork {
    pub blocks: Vec<Sequential>,
    pub head: Sequential,
    pub adapters: Vec<AdaptedLayer>,
    pub anderson: AndersonConfig,
    pub backward_mode: BackwardMode,
    /// Treat canonicalizer outputs as constants in training.
    pub freeze_canonicalizers: bool,
}

/// Layer shapes of the toy classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyArch {
    pub input: (usize, usize, usize),
    pub widths: Vec<usize>,
    pub pool: usize,
    pub classes: usize,
}

impl Default for ToyArch {
    fn default() -> Self {
        Self {
            input: (64, 64, 1),
            widths: vec![16, 32, 64],
            pool: 4,
            classes: 100,
        }
    }
}

impl ToyArch {
    /// Stride-2 conv + relu blocks and a pooled dense head.
    pub fn build(&self, seed: u64) -> Result<(Vec<Sequential>, Sequential)> {
        if self.widths.is_empty() {
            return Err(Error::Structural("toy classifier needs at least one block".into()));
        }
        let mut shape = self.input;
        let mut blocks = Vec::new();
        for (k, &w) in self.widths.iter().enumerate() {
            let mut b = Sequential::new(shape, vec![LayerSpec::conv(shape.2, w, 3, 2, 1), LayerSpec::Relu])?;
            b.init_he(seed.wrapping_add(k as u64));
            shape = b.output_shape();
            blocks.push(b);
        }
        let mut head = Sequential::new(
            shape,
            vec![
                LayerSpec::AdaptiveAvgPool {
                    out_h: self.pool,
                    out_w: self.pool,
                },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    inputs: self.pool * self.pool * shape.2,
                    outputs: self.classes,
                },
            ],
        )?;
        head.init_he(seed.wrapping_add(1000));
        Ok((blocks, head))
    }
}

struct LayerRecord {
    input: FeatureMap,
    warp: Option<Warp2d>,
    tape: Option<DecTape>,
    trace: Trace,
}

/// Activations of a recorded forward pass.
pub struct ForwardRecord {
    layers: Vec<LayerRecord>,
    head: Trace,
    pub logits: Vec<f64>,
}

impl ForwardRecord {
    /// Output of the last block (the last spatial feature map).
    pub fn last_spatial(&self) -> &FeatureMap {
        &self.head.inputs[0]
    }

    /// Warps used at every layer (`None` for bare layers).
    pub fn warps(&self) -> Vec<Option<Warp2d>> {
        self.layers.iter().map(|l| l.warp.clone()).collect()
    }
}

/// Gradients per parameter group, in [`AdaptedNetwork::param_groups`] order.
pub type GroupGrads = Vec<Vec<f64>>;

pub fn add_grads(acc: &mut GroupGrads, other: &GroupGrads, scale: f64) {
    for (a, b) in acc.iter_mut().zip(other) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += scale * y;
        }
    }
}

impl AdaptedNetwork {
    /// Unadapted network.
    pub fn new(blocks: Vec<Sequential>, head: Sequential) -> Result<Self> {
        let n = blocks.len();
        let net = Self {
            blocks,
            head,
            adapters: vec![AdaptedLayer::bare(); n],
            anderson: AndersonConfig::default(),
            backward_mode: BackwardMode::Phantom1,
            freeze_canonicalizers: false,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn with_adapters(mut self, adapters: Vec<AdaptedLayer>) -> Result<Self> {
        self.adapters = adapters;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Structural("adapted network needs at least one layer".into()));
        }
        if self.adapters.len() != self.blocks.len() {
            return Err(Error::Structural(format!(
                "{} adapters for {} blocks",
                self.adapters.len(),
                self.blocks.len()
            )));
        }
        for k in 1..self.blocks.len() {
            if self.blocks[k].input_shape() != self.blocks[k - 1].output_shape() {
                return Err(Error::Structural(format!("block {k} input shape mismatch")));
            }
        }
        if self.head.input_shape() != self.blocks.last().expect("nonempty").output_shape() {
            return Err(Error::Structural("head input shape mismatch".into()));
        }
        let mut seen_invariant = false;
        let mut have_source = false;
        for (k, a) in self.adapters.iter().enumerate() {
            if seen_invariant && a.wraps() {
                return Err(Error::Structural(format!(
                    "layer {k} is wrapped after an invariant layer"
                )));
            }
            match &a.canonicalizer {
                Canonicalizer::Shared if !have_source => {
                    return Err(Error::Structural(format!(
                        "layer {k} shares a warp but no earlier layer computes one"
                    )))
                }
                Canonicalizer::Dec(d) if d.input_shape() != self.blocks[k].input_shape() => {
                    return Err(Error::Structural(format!(
                        "DEC at layer {k} expects {:?}, block input is {:?}",
                        d.input_shape(),
                        self.blocks[k].input_shape()
                    )))
                }
                Canonicalizer::Vanilla { candidates, .. } if candidates.is_empty() => {
                    return Err(Error::Structural("vanilla candidate set is empty".into()))
                }
                Canonicalizer::None | Canonicalizer::Shared => {}
                _ => have_source = true,
            }
            if a.wraps() && a.mode == AdapterMode::Invariant {
                seen_invariant = true;
            }
        }
        Ok(())
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.blocks[0].input_shape()
    }

    /// Trainable networks: blocks, head, then every DEC in layer order.
    pub fn param_groups(&self) -> Vec<&Sequential> {
        let mut g: Vec<&Sequential> = self.blocks.iter().collect();
        g.push(&self.head);
        for a in &self.adapters {
            if let Canonicalizer::Dec(d) = &a.canonicalizer {
                g.push(d.net());
            }
        }
        g
    }

    pub fn param_groups_mut(&mut self) -> Vec<&mut Sequential> {
        let mut g: Vec<&mut Sequential> = self.blocks.iter_mut().collect();
        g.push(&mut self.head);
        for a in &mut self.adapters {
            if let Canonicalizer::Dec(d) = &mut a.canonicalizer {
                g.push(d.net_mut());
            }
        }
        g
    }

    pub fn zero_grads(&self) -> GroupGrads {
        self.param_groups().iter().map(|s| vec![0.0; s.param_count()]).collect()
    }

    fn canonical_warp(
        &self,
        k: usize,
        x: &FeatureMap,
        shared: &Option<Warp2d>,
        train: bool,
    ) -> Result<(Option<Warp2d>, Option<DecTape>)> {
        Ok(match &self.adapters[k].canonicalizer {
            Canonicalizer::None => (None, None),
            Canonicalizer::Oracle(w) => (Some(w.clone()), None),
            Canonicalizer::Shared => (shared.clone(), None),
            Canonicalizer::Vanilla { energy, candidates } => {
                let (_, w) = crate::dec::vanilla_canonicalize(energy, x, candidates)?;
                (Some(w), None)
            }
            Canonicalizer::Dec(d) => {
                if train && !self.freeze_canonicalizers {
                    let tape = d.forward_train(x, &self.anderson, self.backward_mode)?;
                    (Some(tape.warp.clone()), Some(tape))
                } else {
                    (Some(d.solve(x, None, &self.anderson)?.warp), None)
                }
            }
        })
    }

    fn run(&self, img: &FeatureMap, train: bool) -> Result<ForwardRecord> {
        if img.shape() != self.input_shape() {
            return Err(Error::Shape(format!(
                "network expects {:?}, got {:?}",
                self.input_shape(),
                img.shape()
            )));
        }
        let mut cur = img.clone();
        let mut shared: Option<Warp2d> = None;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for k in 0..self.blocks.len() {
            let (warp, tape) = self.canonical_warp(k, &cur, &shared, train)?;
            if warp.is_some() && !matches!(self.adapters[k].canonicalizer, Canonicalizer::Shared) {
                shared = warp.clone();
            }
            let x = match &warp {
                Some(w) => apply_warp_inverse(&cur, w),
                None => cur.clone(),
            };
            let trace = self.blocks[k].forward(&x)?;
            let out = match (&warp, self.adapters[k].mode) {
                (Some(w), AdapterMode::Equivariant) => apply_warp(&trace.output, w),
                _ => trace.output.clone(),
            };
            layers.push(LayerRecord {
                input: std::mem::replace(&mut cur, out),
                warp,
                tape,
                trace,
            });
        }
        let head = self.head.forward(&cur)?;
        Ok(ForwardRecord {
            logits: head.output.data().to_vec(),
            layers,
            head,
        })
    }

    /// Inference forward pass with per-layer warp diagnostics.
    pub fn forward(&self, img: &FeatureMap) -> Result<ForwardRecord> {
        self.run(img, false)
    }

    pub fn logits(&self, img: &FeatureMap) -> Result<Vec<f64>> {
        Ok(self.forward(img)?.logits)
    }

    /// Last spatial feature map.
    pub fn features(&self, img: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward(img)?.last_spatial().clone())
    }

    /// Training forward pass: DEC warps come from `H^K` at the fixed point.
    pub fn forward_train(&self, img: &FeatureMap) -> Result<ForwardRecord> {
        self.run(img, true)
    }

    /// Reverse pass with upstream on the logits and/or the last spatial map.
    /// Returns group gradients and the input gradient.
    pub fn backward(
        &self,
        rec: &ForwardRecord,
        d_logits: Option<&[f64]>,
        d_spatial: Option<&FeatureMap>,
    ) -> Result<(GroupGrads, FeatureMap)> {
        let mut grads = self.zero_grads();
        let nb = self.blocks.len();
        let last = rec.last_spatial();
        let mut d = FeatureMap::zeros(last.height(), last.width(), last.channels());
        if let Some(dl) = d_logits {
            let up = FeatureMap::from_vec(1, 1, dl.len(), dl.to_vec())?;
            let (g, dx) = self.head.backward(&rec.head, &up)?;
            grads[nb] = g;
            d = dx;
        }
        if let Some(ds) = d_spatial {
            if !ds.same_shape(&d) {
                return Err(Error::Shape("spatial upstream shape mismatch".into()));
            }
            d.add_scaled(ds, 1.0);
        }
        let dec_group: Vec<Option<usize>> = {
            let mut next = nb + 1;
            self.adapters
                .iter()
                .map(|a| {
                    if let Canonicalizer::Dec(_) = a.canonicalizer {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
                .collect()
        };
        let mut pending_shared: Option<Vec<f64>> = None;
        for k in (0..nb).rev() {
            let rl = &rec.layers[k];
            let adapter = &self.adapters[k];
            let mut d_values: Option<Vec<f64>> = None;
            let dy = match (&rl.warp, adapter.mode) {
                (Some(w), AdapterMode::Equivariant) => {
                    let g = warp_backward(&rl.trace.output, w, &d)?;
                    d_values = Some(g.d_warp_values);
                    g.d_pixels
                }
                _ => d,
            };
            let (g, dx) = self.blocks[k].backward(&rl.trace, &dy)?;
            grads[k] = g;
            d = match &rl.warp {
                Some(w) => {
                    let g = warp_inverse_backward(&rl.input, w, &dx)?;
                    match &mut d_values {
                        Some(v) => add_vec(v, &g.d_warp_values),
                        None => d_values = Some(g.d_warp_values),
                    }
                    g.d_pixels
                }
                None => dx,
            };
            match &adapter.canonicalizer {
                Canonicalizer::Shared => {
                    if let Some(v) = d_values {
                        match &mut pending_shared {
                            Some(p) => add_vec(p, &v),
                            None => pending_shared = Some(v),
                        }
                    }
                }
                Canonicalizer::None => {}
                c => {
                    let mut total = d_values.unwrap_or_default();
                    if let Some(p) = pending_shared.take() {
                        add_vec(&mut total, &p);
                    }
                    if let (Canonicalizer::Dec(dec), Some(tape)) = (c, &rl.tape) {
                        let dg = dec.backward_from_warp(tape, self.backward_mode, &total)?;
                        grads[dec_group[k].expect("dec group")] = dg.params;
                        d.add_scaled(&dg.image, 1.0);
                    }
                }
            }
        }
        Ok((grads, d))
    }

    /// Cross-entropy loss and gradients for one labelled sample.
    pub fn task_grad(&self, img: &FeatureMap, label: usize) -> Result<(f64, GroupGrads)> {
        let rec = self.forward_train(img)?;
        let (loss, dl) = softmax_cross_entropy(&rec.logits, label);
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite task loss {loss}")));
        }
        let (g, _) = self.backward(&rec, Some(&dl), None)?;
        Ok((loss, g))
    }

    /// `mean (M(I) − M(S(I; w)))²` over logits, with gradients through both
    /// branches.
    pub fn invariance_grad(&self, img: &FeatureMap, warp: &Warp2d) -> Result<(f64, GroupGrads)> {
        let a = self.forward_train(img)?;
        let b = self.forward_train(&apply_warp(img, warp))?;
        let n = a.logits.len() as f64;
        let diff: Vec<f64> = a.logits.iter().zip(&b.logits).map(|(x, y)| x - y).collect();
        let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
        let da: Vec<f64> = diff.iter().map(|v| 2.0 * v / n).collect();
        let db: Vec<f64> = da.iter().map(|v| -v).collect();
        let (mut g, _) = self.backward(&a, Some(&da), None)?;
        let (gb, _) = self.backward(&b, Some(&db), None)?;
        add_grads(&mut g, &gb, 1.0);
        Ok((loss, g))
    }

    /// `mean (S(F(I); w) − F(S(I; w)))²` on the last spatial feature map,
    /// with gradients through both branches.
    pub fn equivariance_grad(&self, img: &FeatureMap, warp: &Warp2d) -> Result<(f64, GroupGrads)> {
        let a = self.forward_train(img)?;
        let b = self.forward_train(&apply_warp(img, warp))?;
        let fa = a.last_spatial();
        let wa = apply_warp(fa, warp);
        let fb = b.last_spatial();
        let n = fb.len() as f64;
        let mut diff = wa.clone();
        diff.add_scaled(fb, -1.0);
        let loss = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
        let up = diff.map(|v| 2.0 * v / n);
        let da = warp_backward(fa, warp, &up)?.d_pixels;
        let db = up.map(|v| -v);
        let (mut g, _) = self.backward(&a, None, Some(&da))?;
        let (gb, _) = self.backward(&b, None, Some(&db))?;
        add_grads(&mut g, &gb, 1.0);
        Ok((loss, g))
    }
}

impl AdaptedNetwork {
    /// Named networks holding parameters: blocks, head, DECs and vanilla
    /// energies.
    fn named(&self) -> Vec<(String, &Sequential)> {
        let mut v: Vec<(String, &Sequential)> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(k, b)| (format!("block{k}"), b))
            .collect();
        v.push(("head".into(), &self.head));
        for (k, a) in self.adapters.iter().enumerate() {
            match &a.canonicalizer {
                Canonicalizer::Dec(d) => v.push((format!("dec{k}"), d.net())),
                Canonicalizer::Vanilla { energy, .. } => v.push((format!("energy{k}"), energy.net())),
                _ => {}
            }
        }
        v
    }

    /// File stems written by [`AdaptedNetwork::save`].
    pub fn checkpoint_names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Writes every parameterized network as `<name>.mcan` into `dir`.
    pub fn save(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in self.named() {
            save_checkpoint(net, &dir.join(format!("{name}.mcan")))?;
        }
        Ok(())
    }

    /// Loads parameters saved by [`AdaptedNetwork::save`] into a network of
    /// the same topology.
    pub fn load(&mut self, dir: &std::path::Path) -> Result<()> {
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        let mut loaded = Vec::with_capacity(names.len());
        for (name, cur) in names.iter().zip(self.named()) {
            let net = load_checkpoint(&dir.join(format!("{name}.mcan")))?;
            if net.specs() != cur.1.specs() || net.input_shape() != cur.1.input_shape() {
                return Err(Error::Structural(format!("checkpoint {name} has a different topology")));
            }
            loaded.push(net.params().data().to_vec());
        }
        let mut k = 0;
        let mut put = |s: &mut Sequential| -> Result<()> {
            s.set_params(&loaded[k])?;
            k += 1;
            Ok(())
        };
        for b in &mut self.blocks {
            put(b)?;
        }
        put(&mut self.head)?;
        for a in &mut self.adapters {
            match &mut a.canonicalizer {
                Canonicalizer::Dec(d) => put(d.net_mut())?,
                Canonicalizer::Vanilla { energy, .. } => put(energy.net_mut())?,
                _ => {}
            }
        }
        Ok(())
    }

    /// Copies block and head parameters from `other` (same base topology).
    pub fn copy_base_from(&mut self, other: &AdaptedNetwork) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(Error::Structural("base networks differ in depth".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            a.set_params(b.params().data())?;
        }
        self.head.set_params(other.head.params().data())
    }
}

fn add_vec(a: &mut Vec<f64>, b: &[f64]) {
    if a.is_empty() {
        a.extend_from_slice(b);
    } else {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}
