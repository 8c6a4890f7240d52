//! Energies over warp parameters, gradient-descent canonicalization and
//! the discretized (candidate-set) canonicalizer.

use serde::{Deserialize, Serialize};

use super::anderson::{anderson, AndersonConfig, SolveStats};
use super::constrain::Constrainer;
use crate::error::{Error, Result};
use crate::image::FeatureMap;
use crate::nn::{LayerSpec, Sequential};
use crate::sampling::{apply_warp_inverse, warp_inverse_backward};
use crate::warp::{Direction, Warp2d};

/// Scalar energy of raw warp parameters.
pub trait Energy {
    fn value_and_grad(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, raw: &[f64]) -> Result<f64> {
        Ok(self.value_and_grad(raw)?.0)
    }
}

/// Scalar energy of an image, as used by candidate-set canonicalization.
pub trait ImageEnergy {
    fn score(&self, img: &FeatureMap) -> Result<f64>;
}

/// `w/2 · ‖raw − target‖²`.
#[derive(Debug, Clone)]
pub struct ParamQuadratic {
    pub target: Vec<f64>,
    pub weight: f64,
}

impl Energy for ParamQuadratic {
    fn value_and_grad(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        if raw.len() != self.target.len() {
            return Err(Error::Shape("raw/target length mismatch".into()));
        }
        let d: Vec<f64> = raw.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let v = 0.5 * self.weight * d.iter().map(|x| x * x).sum::<f64>();
        Ok((v, d.into_iter().map(|x| self.weight * x).collect()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantEnergy(pub f64);

impl Energy for ConstantEnergy {
    fn value_and_grad(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.0, vec![0.0; raw.len()]))
    }
}

impl ImageEnergy for ConstantEnergy {
    fn score(&self, _img: &FeatureMap) -> Result<f64> {
        Ok(self.0)
    }
}

/// Three strided conv layers, global average pooling and a scalar readout.
#[derive(Debug, Clone)]
pub struct EnergyNet {
    net: Sequential,
}

impl EnergyNet {
    pub fn new(shape: (usize, usize, usize), widths: [usize; 3], seed: u64) -> Result<Self> {
        let specs = vec![
            LayerSpec::conv(shape.2, widths[0], 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::conv(widths[0], widths[1], 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::conv(widths[1], widths[2], 3, 2, 1),
            LayerSpec::Relu,
            LayerSpec::AdaptiveAvgPool { out_h: 1, out_w: 1 },
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: widths[2],
                outputs: 1,
            },
        ];
        let mut net = Sequential::new(shape, specs)?;
        net.init_he(seed);
        Ok(Self { net })
    }

    pub fn from_net(net: Sequential) -> Result<Self> {
        if net.output_shape() != (1, 1, 1) {
            return Err(Error::Structural("energy network must output one scalar".into()));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &Sequential {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential {
        &mut self.net
    }

    /// Energy and its gradient with respect to the image.
    pub fn score_and_grad(&self, img: &FeatureMap) -> Result<(f64, FeatureMap)> {
        let t = self.net.forward(img)?;
        let (_, d) = self.net.backward(&t, &FeatureMap::filled(1, 1, 1, 1.0))?;
        Ok((t.output.data()[0], d))
    }
}

impl ImageEnergy for EnergyNet {
    fn score(&self, img: &FeatureMap) -> Result<f64> {
        Ok(self.net.predict(img)?.data()[0])
    }
}

/// `E(S⁻¹(img; constrain(raw)))` for a network energy.
pub struct NetEnergy<'a> {
    pub net: &'a EnergyNet,
    pub img: &'a FeatureMap,
    pub constrainer: Constrainer,
}

impl Energy for NetEnergy<'_> {
    fn value_and_grad(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        let w = self.constrainer.warp(raw)?;
        let x = apply_warp_inverse(self.img, &w);
        let (e, dx) = self.net.score_and_grad(&x)?;
        let wg = warp_inverse_backward(self.img, &w, &dx)?;
        Ok((e, self.constrainer.backward(raw, &wg.d_warp_values)?))
    }
}

/// Smooth single-channel image: a sum of isotropic Gaussian blobs on the
/// unit square, evaluated analytically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticImage {
    /// `(cx, cy, sigma, amplitude)`
    pub blobs: Vec<(f64, f64, f64, f64)>,
}

impl AnalyticImage {
    /// Value and spatial gradient at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for &(cx, cy, s, a) in &self.blobs {
            let dx = x - cx;
            let dy = y - cy;
            let e = a * (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            v += e;
            gx -= e * dx / (s * s);
            gy -= e * dy / (s * s);
        }
        (v, gx, gy)
    }

    pub fn render(&self, h: usize, w: usize) -> FeatureMap {
        FeatureMap::from_fn(h, w, |x, y| self.eval(x, y).0)
    }

    /// `A(l(p))` sampled at pixel centres, exactly.
    pub fn render_warped(&self, h: usize, w: usize, warp: &Warp2d) -> FeatureMap {
        FeatureMap::from_fn(h, w, |x, y| {
            let e = warp.eval_with_grads(x, y, Direction::Forward);
            self.eval(e.x, e.y).0
        })
    }
}

/// `½ mean_p (A(l(p)) − T(p))² + μ/2 ‖raw‖²` with `l = constrain(raw)`.
/// The analytic source makes this smooth in `raw`.
#[derive(Debug, Clone)]
pub struct TemplateEnergy {
    pub image: AnalyticImage,
    pub target: FeatureMap,
    pub constrainer: Constrainer,
    pub mu: f64,
}

impl Energy for TemplateEnergy {
    fn value_and_grad(&self, raw: &[f64]) -> Result<(f64, Vec<f64>)> {
        let warp = self.constrainer.warp(raw)?;
        let (h, w, _) = self.target.shape();
        let n = (h * w) as f64;
        let mut dv = vec![0.0; warp.param_count()];
        let mut e = 0.0;
        for i in 0..h {
            let y = (i as f64 + 0.5) / h as f64;
            for j in 0..w {
                let x = (j as f64 + 0.5) / w as f64;
                let p = warp.eval_with_grads(x, y, Direction::Forward);
                let (a, ax, ay) = self.image.eval(p.x, p.y);
                let r = a - self.target.get(i, j, 0);
                e += 0.5 * r * r / n;
                let c = r / n;
                for &(k, d) in &p.dx {
                    dv[k] += c * ax * d;
                }
                for &(k, d) in &p.dy {
                    dv[k] += c * ay * d;
                }
            }
        }
        let mut g = self.constrainer.backward(raw, &dv)?;
        for (gk, rk) in g.iter_mut().zip(raw) {
            *gk += self.mu * rk;
            e += 0.5 * self.mu * rk * rk;
        }
        Ok((e, g))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GdConfig {
    pub lr: f64,
    pub max_steps: usize,
    /// Stop once `‖∇E‖` falls below this.
    pub grad_tol: f64,
    /// Backtrack (Armijo) until the energy decreases.
    pub line_search: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            max_steps: 2000,
            grad_tol: 1e-9,
            line_search: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GdResult {
    pub raw: Vec<f64>,
    pub warp: Warp2d,
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
    pub grad_norm: f64,
    pub steps: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent on `raw ↦ E(raw)` starting from `phi0`.
pub fn gd_canonicalize<E: Energy + ?Sized>(
    energy: &E,
    constrainer: &Constrainer,
    phi0: &[f64],
    cfg: &GdConfig,
) -> Result<GdResult> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Usage("gradient descent lr must be positive".into()));
    }
    let mut raw = phi0.to_vec();
    let (mut e, mut g) = energy.value_and_grad(&raw)?;
    let mut energies = vec![e];
    let mut increases = 0;
    let mut steps = 0;
    while steps < cfg.max_steps && norm(&g) >= cfg.grad_tol {
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let mut lr = cfg.lr;
        let (cand, ce, cg) = loop {
            let cand: Vec<f64> = raw.iter().zip(&g).map(|(r, d)| r - lr * d).collect();
            let (ce, cg) = energy.value_and_grad(&cand)?;
            if !ce.is_finite() {
                return Err(Error::Optimizer(format!("non-finite energy at step {steps}")));
            }
            if !cfg.line_search || ce <= e - 1e-4 * lr * gg || lr < 1e-12 {
                break (cand, ce, cg);
            }
            lr *= 0.5;
        };
        if cfg.line_search && ce > e {
            // no decrease at any step size: numerically stationary
            break;
        }
        increases = if ce > e { increases + 1 } else { 0 };
        if increases >= 10 {
            return Err(Error::Optimizer(format!(
                "energy increased for 10 consecutive steps (step {steps}, energy {ce})"
            )));
        }
        raw = cand;
        e = ce;
        g = cg;
        energies.push(e);
        steps += 1;
    }
    Ok(GdResult {
        warp: constrainer.warp(&raw)?,
        grad_norm: norm(&g),
        raw,
        energies,
        steps,
    })
}

/// Fixed point of the gradient map `Φ ↦ Φ − η ∇E(Φ)` by Anderson
/// acceleration; its fixed points are exactly the stationary points of `E`.
pub fn gradient_map_fixed_point<E: Energy + ?Sized>(
    energy: &E,
    phi0: &[f64],
    eta: f64,
    cfg: &AndersonConfig,
) -> Result<(Vec<f64>, SolveStats)> {
    anderson(
        |z| {
            let (_, g) = energy.value_and_grad(z)?;
            Ok(z.iter().zip(&g).map(|(a, b)| a - eta * b).collect())
        },
        phi0,
        cfg,
    )
}

/// Picks the candidate whose unwarped image has the lowest energy; ties go
/// to the lowest index.
pub fn vanilla_canonicalize<E: ImageEnergy + ?Sized>(
    energy: &E,
    img: &FeatureMap,
    candidates: &[Warp2d],
) -> Result<(usize, Warp2d)> {
    if candidates.is_empty() {
        return Err(Error::Usage("candidate set is empty".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (k, c) in candidates.iter().enumerate() {
        let e = energy.score(&apply_warp_inverse(img, c))?;
        if e < best.1 {
            best = (k, e);
        }
    }
    Ok((best.0, candidates[best.0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::warp::PiecewiseMonotone1d;

    #[test]
    fn quadratic_converges_to_target() {
        let c = Constrainer::new(4, 4, 0.02).unwrap();
        let target: Vec<f64> = (0..40).map(|k| (k as f64 * 0.37).sin()).collect();
        let e = ParamQuadratic {
            target: target.clone(),
            weight: 1.0,
        };
        let r = gd_canonicalize(&e, &c, &vec![0.0; 40], &GdConfig::default()).unwrap();
        let err = r
            .raw
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6 && r.steps <= 2000);
    }

    #[test]
    fn constant_energy_keeps_start() {
        let c = Constrainer::new(4, 4, 0.02).unwrap();
        let phi0: Vec<f64> = (0..40).map(|k| k as f64 * 0.01).collect();
        let r = gd_canonicalize(&ConstantEnergy(3.0), &c, &phi0, &GdConfig::default()).unwrap();
        assert_eq!(r.raw, phi0);
        let cands = vec![Warp2d::identity(4, 4), Warp2d::identity(4, 4)];
        let img = FeatureMap::filled(8, 8, 1, 0.5);
        assert_eq!(vanilla_canonicalize(&ConstantEnergy(1.0), &img, &cands).unwrap().0, 0);
    }

    #[test]
    fn template_gradient_matches_finite_differences() {
        let c = Constrainer::new(3, 3, 0.05).unwrap();
        let image = AnalyticImage {
            blobs: vec![(0.3, 0.4, 0.15, 1.0), (0.7, 0.6, 0.2, -0.5)],
        };
        let tw = c
            .warp(&(0..c.raw_len()).map(|k| (k as f64).sin()).collect::<Vec<_>>())
            .unwrap();
        let e = TemplateEnergy {
            target: image.render_warped(12, 12, &tw),
            image,
            constrainer: c,
            mu: 1e-3,
        };
        let raw: Vec<f64> = (0..c.raw_len()).map(|k| 0.3 * (k as f64 * 1.3).cos()).collect();
        let (_, g) = e.value_and_grad(&raw).unwrap();
        let h = 1e-6;
        for k in 0..raw.len() {
            let mut p = raw.clone();
            p[k] += h;
            let mut m = raw.clone();
            m[k] -= h;
            let fd = (e.value(&p).unwrap() - e.value(&m).unwrap()) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn vanilla_picks_matching_candidate() {
        struct Dist(FeatureMap);
        impl ImageEnergy for Dist {
            fn score(&self, img: &FeatureMap) -> Result<f64> {
                Ok(img.mean_sq_diff(&self.0))
            }
        }
        let img = FeatureMap::from_fn(16, 16, |x, y| (5.0 * x).sin() + y * y);
        let f = |v: f64| PiecewiseMonotone1d::uniform(vec![0.0, v, 1.0]).unwrap();
        let cands: Vec<Warp2d> = [0.5, 0.3, 0.7]
            .iter()
            .map(|&v| Warp2d::separable(&f(v), &f(0.5), 2, 2))
            .collect();
        let e = Dist(apply_warp_inverse(&img, &cands[2]));
        assert_eq!(vanilla_canonicalize(&e, &img, &cands).unwrap().0, 2);
    }
}
