//! Comparison methods sharing the toy classifier: augmentation only,
//! vanilla discretized canonicalization, equivariance/invariance loss
//! fine-tuning, and the DEC-adapted network.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canon::{add_grads, AdaptedLayer, AdaptedNetwork, Canonicalizer, GroupGrads, ToyArch};
use crate::datagen::{make_variants, ComposedSample};
use crate::dec::{AndersonConfig, BackwardMode, Constrainer, DecNet, EnergyNet};
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::metrics::{equivariance_error, invariance_error, per_scale_accuracy, MetricsReport, Reduction};
use crate::nn::{Optimizer, TrainConfig};
use crate::rng::stream_rng;
use crate::sampling::{apply_warp, apply_warp_inverse};
use crate::warp::{PiecewiseMonotone1d, Warp2d, WarpSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Augmented,
    VanillaCanon,
    EquLoss,
    InvLoss,
    Dec,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::Augmented,
        BaselineKind::VanillaCanon,
        BaselineKind::EquLoss,
        BaselineKind::InvLoss,
        BaselineKind::Dec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Augmented => "augmented",
            BaselineKind::VanillaCanon => "vanilla_canon",
            BaselineKind::EquLoss => "equ_loss",
            BaselineKind::InvLoss => "inv_loss",
            BaselineKind::Dec => "dec",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown baseline kind {s:?}")))
    }

    fn uses_aux(self) -> bool {
        matches!(self, BaselineKind::EquLoss | BaselineKind::InvLoss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecSettings {
    /// Warp grid `N = M`.
    pub grid: usize,
    pub min_segment: f64,
    pub widths: (usize, usize),
    /// Number of wrapped blocks, counted from the input.
    pub layers: usize,
    /// Make the last wrapped block invariant.
    pub last_invariant: bool,
    /// Reuse the first layer's warp at every wrapped layer.
    pub share_warp: bool,
    pub freeze: bool,
    pub anderson: AndersonConfig,
    pub backward: BackwardMode,
    /// Learning-rate multiplier for DEC parameters during fine-tuning.
    pub lr_scale: f64,
}

impl Default for DecSettings {
    fn default() -> Self {
        Self {
            grid: 4,
            min_segment: 0.02,
            widths: (16, 32),
            layers: 3,
            last_invariant: true,
            share_warp: false,
            freeze: false,
            anderson: AndersonConfig::default(),
            backward: BackwardMode::Phantom1,
            lr_scale: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VanillaSettings {
    /// Candidates per axis; the set has `per_axis²` warps.
    pub per_axis: usize,
    pub max_slope: f64,
    pub energy_widths: [usize; 3],
    pub energy_lr: f64,
}

impl Default for VanillaSettings {
    fn default() -> Self {
        Self {
            per_axis: 8,
            max_slope: 1.96,
            energy_widths: [8, 16, 32],
            energy_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    /// Warps per image for EquE.
    pub n_warps: usize,
    /// Images used for EquE.
    pub equ_images: usize,
    /// Base images used for InvE, each with `inv_variants` variants.
    pub inv_groups: usize,
    pub inv_variants: usize,
    pub buckets: Vec<(f64, f64)>,
    /// Compare softmax outputs instead of logits in InvE.
    pub probabilities: bool,
    pub reduction: Reduction,
    pub sampler: WarpSampler,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_warps: 8,
            equ_images: 200,
            inv_groups: 1000,
            inv_variants: 4,
            buckets: crate::metrics::DEFAULT_BUCKETS.to_vec(),
            probabilities: false,
            reduction: Reduction::Mean,
            sampler: WarpSampler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub arch: ToyArch,
    /// Augmented pretraining.
    pub pretrain: TrainConfig,
    /// Fine-tuning of every other kind; `aux_weight` is `λ`.
    pub finetune: TrainConfig,
    pub augment: WarpSampler,
    /// Probability that a training sample is warped.
    pub augment_prob: f64,
    pub dec: DecSettings,
    pub vanilla: VanillaSettings,
    pub eval: EvalConfig,
    /// Test samples whose accuracy is logged after every epoch.
    pub val_size: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arch: ToyArch::default(),
            pretrain: TrainConfig {
                lr: 3e-3,
                batch_size: 16,
                epochs: 16,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                lr: 5e-4,
                batch_size: 16,
                epochs: 3,
                ..TrainConfig::default()
            },
            augment: WarpSampler::default(),
            augment_prob: 0.5,
            dec: DecSettings::default(),
            vanilla: VanillaSettings::default(),
            eval: EvalConfig::default(),
            val_size: 500,
        }
    }
}

/// `per_axis²` two-segment separable warps whose first-segment slopes are
/// log-spaced over `[1/2, 2]` (capped at `max_slope`); the slope closest to
/// one is snapped to one so the identity is candidate 0.
pub fn vanilla_candidates(per_axis: usize, max_slope: f64) -> Result<Vec<Warp2d>> {
    if per_axis == 0 || !(max_slope > 1.0 && max_slope < 2.0) {
        return Err(Error::Usage(
            "vanilla candidates need per_axis > 0 and max_slope in (1, 2)".into(),
        ));
    }
    let mut slopes: Vec<f64> = (0..per_axis)
        .map(|k| {
            let t = if per_axis == 1 {
                0.0
            } else {
                -1.0 + 2.0 * k as f64 / (per_axis - 1) as f64
            };
            2f64.powf(t).min(max_slope)
        })
        .collect();
    let near = (0..per_axis)
        .min_by(|&a, &b| (slopes[a].ln().abs()).total_cmp(&slopes[b].ln().abs()))
        .expect("nonempty");
    slopes[near] = 1.0;
    let f = |s: f64| PiecewiseMonotone1d::uniform(vec![0.0, 0.5 * s, 1.0]);
    let mut order: Vec<usize> = (0..per_axis).collect();
    order.swap(0, near);
    let mut out = Vec::with_capacity(per_axis * per_axis);
    for &i in &order {
        for &j in &order {
            out.push(Warp2d::separable(&f(slopes[i])?, &f(slopes[j])?, 2, 2));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AuxLoss {
    None,
    Invariance(f64),
    Equivariance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub aux_loss: f64,
    pub val_accuracy: f64,
}

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,aux_loss,val_accuracy\n");
    for e in log {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.4}\n",
            e.epoch, e.loss, e.aux_loss, e.val_accuracy
        ));
    }
    s
}

const AUG_STREAM: u64 = 1 << 56;
const SHUFFLE_STREAM: u64 = 2 << 56;
const AUX_STREAM: u64 = 3 << 56;
const DISC_STREAM: u64 = 4 << 56;

fn sample_stream(base: u64, epoch: usize, index: usize) -> u64 {
    base + ((epoch as u64) << 32) + index as u64
}

/// Training input for sample `index` in `epoch`: warped with probability
/// `prob`, independent of the method being trained.
pub fn augmented_input(
    s: &ComposedSample,
    sampler: &WarpSampler,
    prob: f64,
    seed: u64,
    epoch: usize,
    index: usize,
) -> FeatureMap {
    let mut rng = stream_rng(seed, sample_stream(AUG_STREAM, epoch, index));
    if rng.random::<f64>() < prob {
        apply_warp(&s.image, &sampler.sample_2d_with(&mut rng))
    } else {
        s.image.clone()
    }
}

pub fn accuracy(net: &AdaptedNetwork, data: &[ComposedSample]) -> Result<f64> {
    let correct = predictions(net, data)?.iter().filter(|p| p.0).count();
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// `(correct, scale)` per sample.
pub fn predictions(net: &AdaptedNetwork, data: &[ComposedSample]) -> Result<Vec<(bool, f64)>> {
    data.par_iter()
        .map(|s| {
            let l = net.logits(&s.image)?;
            Ok((argmax(&l) == s.label as usize, s.scale()))
        })
        .collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = k;
        }
    }
    best
}

/// One discriminator step: unwarped inputs are pushed to low energy,
/// inputs warped by a random non-identity candidate to high energy.
fn energy_step(
    energy: &mut EnergyNet,
    opt: &mut Optimizer,
    batch: &[&ComposedSample],
    candidates: &[Warp2d],
    seed: u64,
    epoch: usize,
    start: usize,
) -> Result<()> {
    let net = energy.net();
    let n = batch.len();
    let (_, mut g) = net.batch_gradient(2 * n, |i| {
        let s = batch[i / 2];
        let x = if i % 2 == 0 {
            s.image.clone()
        } else {
            let mut rng = stream_rng(seed, sample_stream(DISC_STREAM, epoch, start + i / 2));
            let c = rng.random_range(1..candidates.len().max(2)).min(candidates.len() - 1);
            apply_warp(&s.image, &candidates[c])
        };
        let t = net.forward(&x)?;
        let e = t.output.data()[0];
        // softplus(e) for positives, softplus(−e) for negatives
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let z = sign * e;
        let loss = z.max(0.0) + (-z.abs()).exp().ln_1p();
        let dz = 1.0 / (1.0 + (-z).exp());
        let (pg, _) = net.backward(&t, &FeatureMap::filled(1, 1, 1, sign * dz))?;
        Ok((loss, pg))
    })?;
    for v in &mut g {
        *v /= (2 * n) as f64;
    }
    opt.step(energy.net_mut().params_mut().data_mut(), &g)
}

/// Data pipeline and method switches for [`train_epochs`].
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions<'a> {
    pub augment: &'a WarpSampler,
    pub augment_prob: f64,
    pub aux: AuxLoss,
    /// Present for vanilla canonicalization: trains its energy alongside.
    pub vanilla: Option<&'a VanillaSettings>,
    /// Learning-rate multiplier for canonicalizer parameter groups.
    pub dec_lr_scale: f64,
}

impl<'a> TrainOptions<'a> {
    pub fn plain(augment: &'a WarpSampler, augment_prob: f64) -> Self {
        Self {
            augment,
            augment_prob,
            aux: AuxLoss::None,
            vanilla: None,
            dec_lr_scale: 1.0,
        }
    }
}

/// Trains all parameter groups of `net` for `cfg.epochs` epochs.
pub fn train_epochs(
    net: &mut AdaptedNetwork,
    train: &[ComposedSample],
    val: &[ComposedSample],
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let TrainOptions {
        augment,
        augment_prob,
        aux,
        vanilla,
        dec_lr_scale,
    } = *opts;
    let n_base = net.blocks.len() + 1;
    let mut opts: Vec<Optimizer> = net
        .param_groups()
        .iter()
        .enumerate()
        .map(|(g, s)| {
            let lr = if g < n_base { cfg.lr } else { cfg.lr * dec_lr_scale };
            Optimizer::new(cfg.optimizer, lr, s.param_count())
        })
        .collect();
    let mut energy_opt = match (vanilla, &net.adapters[0].canonicalizer) {
        (Some(v), Canonicalizer::Vanilla { energy, .. }) => {
            Some(Optimizer::new(cfg.optimizer, v.energy_lr, energy.net().param_count()))
        }
        (Some(_), _) => {
            return Err(Error::Structural(
                "vanilla training needs a vanilla canonicalizer at layer 0".into(),
            ))
        }
        _ => None,
    };
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM + epoch as u64));
        let (mut tot, mut tot_aux) = (0.0, 0.0);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if let Some(opt) = energy_opt.as_mut() {
                let batch: Vec<&ComposedSample> = chunk.iter().map(|&i| &train[i]).collect();
                if let Canonicalizer::Vanilla { energy, candidates } = &mut net.adapters[0].canonicalizer {
                    energy_step(energy, opt, &batch, candidates, cfg.seed, epoch, bi * cfg.batch_size)?;
                }
            }
            let netr = &*net;
            let per: Vec<(f64, f64, GroupGrads)> = chunk
                .par_iter()
                .map(|&i| -> Result<(f64, f64, GroupGrads)> {
                    let x = augmented_input(&train[i], augment, augment_prob, cfg.seed, epoch, i);
                    let (l, mut g) = netr.task_grad(&x, train[i].label as usize)?;
                    if cfg.task_weight != 1.0 {
                        for v in g.iter_mut().flatten() {
                            *v *= cfg.task_weight;
                        }
                    }
                    let mut la = 0.0;
                    let w_aux =
                        || augment.sample_2d_with(&mut stream_rng(cfg.seed, sample_stream(AUX_STREAM, epoch, i)));
                    match aux {
                        AuxLoss::Invariance(lam) if lam > 0.0 => {
                            let (a, ga) = netr.invariance_grad(&x, &w_aux())?;
                            la = a;
                            add_grads(&mut g, &ga, lam);
                        }
                        AuxLoss::Equivariance(lam) if lam > 0.0 => {
                            let (a, ga) = netr.equivariance_grad(&x, &w_aux())?;
                            la = a;
                            add_grads(&mut g, &ga, lam);
                        }
                        _ => {}
                    }
                    Ok((l, la, g))
                })
                .collect::<Result<_>>()?;
            let mut grads = net.zero_grads();
            let n = per.len() as f64;
            for (l, la, g) in &per {
                tot += l;
                tot_aux += la;
                add_grads(&mut grads, g, 1.0 / n);
            }
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "non-finite gradient in epoch {epoch}, batch {bi}"
                )));
            }
            for ((p, g), o) in net.param_groups_mut().into_iter().zip(&grads).zip(&mut opts) {
                o.step(p.params_mut().data_mut(), g)?;
            }
            if net
                .param_groups()
                .iter()
                .any(|p| p.params().data().iter().any(|v| !v.is_finite()))
            {
                return Err(Error::Training(format!(
                    "non-finite parameters after epoch {epoch}, batch {bi}"
                )));
            }
        }
        let n = train.len() as f64;
        let val_accuracy = if val.is_empty() { 0.0 } else { accuracy(net, val)? };
        log.push(EpochLog {
            epoch,
            loss: tot / n,
            aux_loss: tot_aux / n,
            val_accuracy,
        });
    }
    Ok(log)
}

/// Attaches the adapters of `kind` to an unadapted network.
pub fn attach(kind: BaselineKind, cfg: &ExperimentConfig, base: &AdaptedNetwork, seed: u64) -> Result<AdaptedNetwork> {
    let mut net = base.clone();
    net.anderson = cfg.dec.anderson;
    net.backward_mode = cfg.dec.backward;
    net.freeze_canonicalizers = cfg.dec.freeze;
    match kind {
        BaselineKind::Augmented | BaselineKind::EquLoss | BaselineKind::InvLoss => Ok(net),
        BaselineKind::VanillaCanon => {
            let v = &cfg.vanilla;
            let energy = EnergyNet::new(net.input_shape(), v.energy_widths, seed.wrapping_add(77))?;
            let candidates = vanilla_candidates(v.per_axis, v.max_slope)?;
            let mut adapters = vec![AdaptedLayer::bare(); net.blocks.len()];
            adapters[0] = AdaptedLayer::invariant(Canonicalizer::Vanilla { energy, candidates });
            net.with_adapters(adapters)
        }
        BaselineKind::Dec => {
            let d = &cfg.dec;
            let nb = net.blocks.len();
            if d.layers == 0 || d.layers > nb {
                return Err(Error::Usage(format!("dec.layers must be in 1..={nb}")));
            }
            let c = Constrainer::new(d.grid, d.grid, d.min_segment)?;
            let mut adapters = vec![AdaptedLayer::bare(); nb];
            for (k, a) in adapters.iter_mut().enumerate().take(d.layers) {
                let canon = if d.share_warp && k > 0 {
                    Canonicalizer::Shared
                } else {
                    let mut dec = DecNet::new(net.blocks[k].input_shape(), c, d.widths)?;
                    dec.init(seed.wrapping_add(100 + k as u64));
                    Canonicalizer::Dec(dec)
                };
                *a = if k + 1 == d.layers && d.last_invariant {
                    AdaptedLayer::invariant(canon)
                } else {
                    AdaptedLayer::equivariant(canon)
                };
            }
            net.with_adapters(adapters)
        }
    }
}

/// Trains one baseline. Every kind except `augmented` starts from the
/// augmented network.
pub fn train_baseline(
    kind: BaselineKind,
    cfg: &ExperimentConfig,
    train: &[ComposedSample],
    val: &[ComposedSample],
    augmented: Option<&AdaptedNetwork>,
    seed: u64,
) -> Result<(AdaptedNetwork, Vec<EpochLog>)> {
    if kind == BaselineKind::Augmented {
        let (blocks, head) = cfg.arch.build(seed)?;
        let mut net = AdaptedNetwork::new(blocks, head)?;
        let tc = TrainConfig {
            seed,
            ..cfg.pretrain.clone()
        };
        let log = train_epochs(
            &mut net,
            train,
            val,
            &tc,
            &TrainOptions::plain(&cfg.augment, cfg.augment_prob),
        )?;
        return Ok((net, log));
    }
    let base = augmented.ok_or_else(|| {
        Error::Usage(format!(
            "{} fine-tunes an augmented checkpoint; train that first",
            kind.name()
        ))
    })?;
    let mut net = attach(kind, cfg, base, seed)?;
    let tc = TrainConfig {
        seed,
        ..cfg.finetune.clone()
    };
    let lam = tc.aux_weight;
    let aux = match kind {
        BaselineKind::InvLoss => AuxLoss::Invariance(lam),
        BaselineKind::EquLoss => AuxLoss::Equivariance(lam),
        _ => AuxLoss::None,
    };
    let vanilla = (kind == BaselineKind::VanillaCanon).then_some(&cfg.vanilla);
    let opts = TrainOptions {
        aux,
        vanilla,
        dec_lr_scale: cfg.dec.lr_scale,
        ..TrainOptions::plain(&cfg.augment, cfg.augment_prob)
    };
    let log = train_epochs(&mut net, train, val, &tc, &opts)?;
    Ok((net, log))
}

/// Accuracy, per-scale accuracy, InvE over warped variants and EquE on the
/// last spatial feature map.
pub fn evaluate(
    net: &AdaptedNetwork,
    test: &[ComposedSample],
    eval: &EvalConfig,
    canonicalizer: &str,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Usage("empty evaluation set".into()));
    }
    let preds = predictions(net, test)?;
    let acc = preds.iter().filter(|p| p.0).count() as f64 / test.len() as f64;
    let ps = per_scale_accuracy(&preds, &eval.buckets)?;
    let groups: Vec<Vec<FeatureMap>> = test
        .iter()
        .take(eval.inv_groups.max(1))
        .map(|s| {
            let mut g = vec![s.image.clone()];
            g.extend(
                make_variants(s, &eval.sampler, eval.inv_variants, eval.seed)
                    .into_iter()
                    .map(|v| v.image),
            );
            g
        })
        .collect();
    let inv = invariance_error(|x| net.logits(x), &groups, eval.probabilities, eval.reduction)?;
    let imgs: Vec<FeatureMap> = test
        .iter()
        .take(eval.equ_images.max(1))
        .map(|s| s.image.clone())
        .collect();
    let equ = equivariance_error(
        |x| net.features(x),
        &imgs,
        &eval.sampler,
        eval.n_warps,
        eval.seed,
        eval.reduction,
    )?;
    Ok(MetricsReport {
        accuracy: acc,
        equ_e: equ.equ_e,
        inv_e: inv.inv_e,
        inv_e_std: inv.inv_e_std,
        interpolation_floor: equ.interpolation_floor,
        per_scale: ps.buckets,
        overflow: ps.overflow,
        acc_std: ps.std,
        seed: eval.seed,
        n_warps: eval.n_warps,
        canonicalizer: canonicalizer.into(),
    })
}

pub fn canonicalizer_name(net: &AdaptedNetwork) -> String {
    let kinds: Vec<&str> = net.adapters.iter().map(|a| a.canonicalizer.kind()).collect();
    kinds.join("+")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub kind: BaselineKind,
    pub seed: u64,
    pub lambda: Option<f64>,
    pub metrics: MetricsReport,
}

/// Trains the augmented network, then every requested kind from it (loss
/// kinds once per `λ`), and evaluates all of them.
pub fn run_comparison(
    cfg: &ExperimentConfig,
    train: &[ComposedSample],
    test: &[ComposedSample],
    kinds: &[BaselineKind],
    lambdas: &[f64],
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let val = &test[..cfg.val_size.min(test.len())];
    let (aug, _) = train_baseline(BaselineKind::Augmented, cfg, train, val, None, seed)?;
    let mut rows = Vec::new();
    for &kind in kinds {
        let runs: Vec<Option<f64>> = if kind.uses_aux() {
            lambdas.iter().map(|&l| Some(l)).collect()
        } else {
            vec![None]
        };
        for lambda in runs {
            let net = if kind == BaselineKind::Augmented {
                aug.clone()
            } else {
                let mut c = cfg.clone();
                if let Some(l) = lambda {
                    c.finetune.aux_weight = l;
                }
                train_baseline(kind, &c, train, val, Some(&aug), seed)?.0
            };
            let metrics = evaluate(&net, test, &cfg.eval, &canonicalizer_name(&net))?;
            rows.push(ComparisonRow {
                kind,
                seed,
                lambda,
                metrics,
            });
        }
    }
    Ok(rows)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut s = String::from("kind,seed,lambda,accuracy,inv_e,equ_e,interpolation_floor,acc_std\n");
    for r in rows {
        let m = &r.metrics;
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6e},{:.6e},{:.6e},{:.6}\n",
            r.kind.name(),
            r.seed,
            r.lambda.map(|l| l.to_string()).unwrap_or_default(),
            m.accuracy,
            m.inv_e,
            m.equ_e,
            m.interpolation_floor,
            m.acc_std
        ));
    }
    s
}

/// Input-level canonical image chosen by a vanilla canonicalizer.
pub fn vanilla_canonical_image(energy: &EnergyNet, img: &FeatureMap, candidates: &[Warp2d]) -> Result<FeatureMap> {
    let (_, w) = crate::dec::vanilla_canonicalize(energy, img, candidates)?;
    Ok(apply_warp_inverse(img, &w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_split, ComposeConfig, DigitSource, Split};

    fn tiny_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            arch: ToyArch {
                input: (32, 32, 1),
                widths: vec![4, 8],
                pool: 2,
                classes: 10,
            },
            ..ExperimentConfig::default()
        };
        cfg.pretrain.epochs = 1;
        cfg.pretrain.batch_size = 8;
        cfg.finetune.epochs = 1;
        cfg.finetune.batch_size = 8;
        cfg.dec.widths = (4, 4);
        cfg.dec.layers = 2;
        cfg.vanilla.per_axis = 2;
        cfg.vanilla.energy_widths = [2, 2, 2];
        cfg.eval.inv_groups = 4;
        cfg.eval.equ_images = 2;
        cfg.eval.n_warps = 2;
        cfg
    }

    fn tiny_data(n: usize) -> Vec<ComposedSample> {
        let c = ComposeConfig {
            canvas: 32,
            digits: 1,
            scale_range: (0.6, 1.4),
            glyph_height: 16,
        };
        generate_split(&DigitSource::procedural(Split::Train), &c, 2, n).unwrap()
    }

    #[test]
    fn candidates_include_identity_first() {
        let c = vanilla_candidates(8, 1.96).unwrap();
        assert_eq!(c.len(), 64);
        assert!(c[0].is_identity());
        assert!(c.iter().skip(1).all(|w| !w.is_identity()));
        assert!(c.iter().all(Warp2d::is_separable));
    }

    #[test]
    fn zero_lambda_matches_plain_finetuning() {
        let cfg = tiny_cfg();
        let data = tiny_data(16);
        let (aug, _) = train_baseline(BaselineKind::Augmented, &cfg, &data, &[], None, 1).unwrap();
        let mut c0 = cfg.clone();
        c0.finetune.aux_weight = 0.0;
        let (a, _) = train_baseline(BaselineKind::InvLoss, &c0, &data, &[], Some(&aug), 1).unwrap();
        let mut plain = aug.clone();
        let tc = TrainConfig {
            seed: 1,
            ..c0.finetune.clone()
        };
        train_epochs(
            &mut plain,
            &data,
            &[],
            &tc,
            &TrainOptions::plain(&c0.augment, c0.augment_prob),
        )
        .unwrap();
        for (x, y) in a.param_groups().iter().zip(plain.param_groups()) {
            assert_eq!(x.params().data(), y.params().data());
        }
    }

    #[test]
    fn missing_prerequisite_is_usage_error() {
        let cfg = tiny_cfg();
        let r = train_baseline(BaselineKind::Dec, &cfg, &tiny_data(4), &[], None, 0);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn identity_only_candidates_match_augmented() {
        let cfg = tiny_cfg();
        let data = tiny_data(8);
        let (aug, _) = train_baseline(BaselineKind::Augmented, &cfg, &data, &[], None, 3).unwrap();
        let mut v = attach(BaselineKind::VanillaCanon, &cfg, &aug, 3).unwrap();
        if let Canonicalizer::Vanilla { candidates, .. } = &mut v.adapters[0].canonicalizer {
            candidates.truncate(1);
        }
        let a = evaluate(&aug, &data, &cfg.eval, "none").unwrap();
        let b = evaluate(&v, &data, &cfg.eval, "none").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn every_kind_trains() {
        let cfg = tiny_cfg();
        let data = tiny_data(8);
        let rows = run_comparison(&cfg, &data, &data, &BaselineKind::ALL, &[0.1], 0).unwrap();
        assert_eq!(rows.len(), 5);
        assert!(comparison_csv(&rows).lines().count() == 6);
        for r in rows {
            assert!((0.0..=1.0).contains(&r.metrics.accuracy));
            assert!(r.metrics.inv_e >= 0.0);
        }
    }
}
