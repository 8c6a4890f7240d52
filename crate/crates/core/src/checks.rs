//! Property suites behind `check-group` and `check-claim1`: group axioms of
//! monotone warps, the gradient-map fixed point of a smooth energy, and
//! Anderson acceleration on an affine contraction.

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dec::anderson::solve_small;
use crate::dec::{
    anderson, gd_canonicalize, gradient_map_fixed_point, AnalyticImage, AndersonConfig, Constrainer, Energy, GdConfig,
    ResidualNorm, TemplateEnergy,
};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::warp::{PiecewiseMonotone1d, Warp2d, WarpSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: usize,
    /// Largest residual observed; compared against `tolerance`.
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Wall time; kept out of serialized reports so they are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl SuiteResult {
    fn new(name: impl Into<String>, cases: usize, max_residual: f64, tolerance: f64, started: Instant) -> Self {
        Self {
            name: name.into(),
            cases,
            passed: max_residual < tolerance,
            max_residual,
            tolerance,
            seconds: started.elapsed().as_secs_f64(),
            note: None,
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
    #[serde(skip)]
    pub seconds: f64,
}

impl CheckReport {
    fn from_suites(suites: Vec<SuiteResult>, started: Instant) -> Self {
        Self {
            passed: suites.iter().all(|s| s.passed),
            suites,
            seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// One `PASS`/`FAIL` line per suite.
    pub fn summary(&self) -> String {
        self.suites
            .iter()
            .map(|s| {
                format!(
                    "{} {:<28} cases {:>6}  max residual {:.3e} (tol {:.0e})  {:.2}s",
                    if s.passed { "PASS" } else { "FAIL" },
                    s.name,
                    s.cases,
                    s.max_residual,
                    s.tolerance,
                    s.seconds
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GroupCheckConfig {
    pub seed: u64,
    /// Random triples per grid size.
    pub triples: usize,
    pub grid_sizes: Vec<usize>,
    /// Evaluation points per function: a uniform lattice plus random draws.
    pub points: usize,
    /// Separable 2D triples.
    pub triples_2d: usize,
    pub jacobian_points: usize,
    pub concentration: f64,
    pub min_segment: f64,
    pub tolerance: f64,
}

impl Default for GroupCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            triples: 1000,
            grid_sizes: vec![2, 4, 8, 16],
            points: 64,
            triples_2d: 200,
            jacobian_points: 10_000,
            concentration: 1.0,
            min_segment: 0.01,
            tolerance: 1e-12,
        }
    }
}

fn eval_points<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    v.extend((0..n).map(|_| rng.random::<f64>()));
    v
}

fn max_gap(f: &PiecewiseMonotone1d, g: impl Fn(f64) -> f64, xs: &[f64]) -> f64 {
    xs.iter().map(|&x| (f.eval_clamped(x) - g(x)).abs()).fold(0.0, f64::max)
}

/// Associativity, identity and inverse laws of 1D monotone warps under
/// composition, checked pointwise against direct nested evaluation.
pub fn check_group_1d(cfg: &GroupCheckConfig) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for &n in &cfg.grid_sizes {
        let sampler = WarpSampler::new(n, cfg.concentration, cfg.min_segment.min(0.5 / n as f64))?;
        let mut rng = stream_rng(cfg.seed, 0x61_0000 + n as u64);
        let id = PiecewiseMonotone1d::identity(n);
        let (mut assoc, mut ident, mut inv, mut closure) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let started = Instant::now();
        for _ in 0..cfg.triples {
            let f = sampler.sample_1d_with(&mut rng);
            let g = sampler.sample_1d_with(&mut rng);
            let h = sampler.sample_1d_with(&mut rng);
            let xs = eval_points(&mut rng, cfg.points);
            let left = f.compose(&g).compose(&h);
            let right = f.compose(&g.compose(&h));
            let nested = |x: f64| f.eval_clamped(g.eval_clamped(h.eval_clamped(x)));
            assoc = assoc
                .max(max_gap(&left, |x| right.eval_clamped(x), &xs))
                .max(max_gap(&left, nested, &xs));
            ident = ident
                .max(max_gap(&f.compose(&id), |x| f.eval_clamped(x), &xs))
                .max(max_gap(&id.compose(&f), |x| f.eval_clamped(x), &xs));
            let fi = f.inverse();
            inv = inv
                .max(max_gap(&f.compose(&fi), |x| x, &xs))
                .max(max_gap(&fi.compose(&f), |x| x, &xs));
            // closure: composites stay valid members of the family
            let k = left.knots();
            let v = left.values();
            let ends =
                (k[0] - 0.0).abs() + (v[0] - 0.0).abs() + (k[k.len() - 1] - 1.0).abs() + (v[v.len() - 1] - 1.0).abs();
            let mono = k.windows(2).chain(v.windows(2)).any(|w| w[1] <= w[0]);
            closure = closure.max(if mono { f64::INFINITY } else { ends });
        }
        for (name, r) in [
            ("associativity", assoc),
            ("identity", ident),
            ("inverse", inv),
            ("closure", closure),
        ] {
            out.push(SuiteResult::new(
                format!("1d_{name}_n{n}"),
                cfg.triples,
                r,
                cfg.tolerance,
                started,
            ));
        }
    }
    Ok(out)
}

fn point_gap(a: &Warp2d, b: impl Fn((f64, f64)) -> (f64, f64), pts: &[(f64, f64)]) -> Result<f64> {
    let mut worst = 0.0f64;
    for &p in pts {
        let u = a.eval(p)?;
        let v = b(p);
        worst = worst.max((u.0 - v.0).abs()).max((u.1 - v.1).abs());
    }
    Ok(worst)
}

/// Group laws of separable 2D warps and the diagonal-positive Jacobian
/// condition that makes every member invertible.
pub fn check_group_2d(cfg: &GroupCheckConfig) -> Result<Vec<SuiteResult>> {
    let n = 4;
    let sampler = WarpSampler::new(n, cfg.concentration, cfg.min_segment)?;
    let mut rng = stream_rng(cfg.seed, 0x62_0000);
    let id = Warp2d::identity(n, n);
    let (mut assoc, mut ident, mut inv) = (0.0f64, 0.0f64, 0.0f64);
    let started = Instant::now();
    let clamp = |p: (f64, f64)| (p.0.clamp(0.0, 1.0), p.1.clamp(0.0, 1.0));
    for _ in 0..cfg.triples_2d {
        let f = sampler.sample_2d_with(&mut rng);
        let g = sampler.sample_2d_with(&mut rng);
        let h = sampler.sample_2d_with(&mut rng);
        let pts: Vec<(f64, f64)> = (0..cfg.points).map(|_| (rng.random(), rng.random())).collect();
        let left = f.compose(&g)?.compose(&h)?;
        let right = f.compose(&g.compose(&h)?)?;
        let nested = |p| {
            let q = h.eval(p).map(clamp).unwrap_or(p);
            let r = g.eval(q).map(clamp).unwrap_or(q);
            f.eval(r).unwrap_or(r)
        };
        assoc = assoc
            .max(point_gap(
                &left,
                |p| right.eval(p).unwrap_or((f64::NAN, f64::NAN)),
                &pts,
            )?)
            .max(point_gap(&left, nested, &pts)?);
        let fe = |p| f.eval(p).unwrap_or((f64::NAN, f64::NAN));
        ident = ident
            .max(point_gap(&f.compose(&id)?, fe, &pts)?)
            .max(point_gap(&id.compose(&f)?, fe, &pts)?);
        let fi = f.inverse();
        inv = inv
            .max(point_gap(&f.compose(&fi)?, |p| p, &pts)?)
            .max(point_gap(&fi.compose(&f)?, |p| p, &pts)?);
    }
    let mut out = Vec::new();
    for (name, r) in [("associativity", assoc), ("identity", ident), ("inverse", inv)] {
        out.push(SuiteResult::new(
            format!("2d_{name}"),
            cfg.triples_2d,
            r,
            cfg.tolerance,
            started,
        ));
    }
    let started = Instant::now();
    let mut off = 0.0f64;
    let mut min_diag = f64::INFINITY;
    for _ in 0..cfg.jacobian_points {
        let w = sampler.sample_2d_with(&mut rng);
        let j = w.jacobian((rng.random(), rng.random()))?;
        off = off.max(j[0][1].abs()).max(j[1][0].abs());
        min_diag = min_diag.min(j[0][0]).min(j[1][1]);
    }
    // residual: off-diagonal magnitude, or infinite if a diagonal entry is not positive
    let r = if min_diag > 0.0 { off } else { f64::INFINITY };
    out.push(
        SuiteResult::new(
            "2d_jacobian_diagonal_positive",
            cfg.jacobian_points,
            r,
            cfg.tolerance,
            started,
        )
        .with_note(format!("smallest diagonal entry {min_diag:.4}")),
    );
    Ok(out)
}

pub fn check_group(cfg: &GroupCheckConfig) -> Result<CheckReport> {
    let started = Instant::now();
    let mut suites = check_group_1d(cfg)?;
    suites.extend(check_group_2d(cfg)?);
    Ok(CheckReport::from_suites(suites, started))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Claim1Config {
    pub seed: u64,
    pub instances: usize,
    pub grid: usize,
    pub min_segment: f64,
    /// Image side for the template energy.
    pub size: usize,
    pub blobs: usize,
    /// Ridge weight μ of the template energy.
    pub mu: f64,
    /// Step η of the gradient map `Φ − η ∇E(Φ)`.
    pub eta: f64,
    pub gd: GdConfig,
    pub anderson: AndersonConfig,
    pub agreement_tol: f64,
    pub grad_tol: f64,
    pub affine_dim: usize,
    pub affine_rho: f64,
}

impl Default for Claim1Config {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            grid: 3,
            min_segment: 0.05,
            size: 16,
            blobs: 3,
            mu: 1e-3,
            eta: 2.0,
            gd: GdConfig {
                lr: 2.0,
                max_steps: 200_000,
                grad_tol: 1e-9,
                line_search: true,
            },
            anderson: AndersonConfig {
                window: 5,
                beta: 1.0,
                max_iters: 2000,
                tol: 1e-11,
                norm: ResidualNorm::Absolute,
                verbose: false,
            },
            agreement_tol: 1e-4,
            grad_tol: 1e-5,
            affine_dim: 16,
            affine_rho: 0.95,
        }
    }
}

/// A smooth template-matching energy with a planted optimum: a random blob
/// image observed through a random warp.
pub fn claim1_instance(cfg: &Claim1Config, index: u64) -> Result<TemplateEnergy> {
    let mut rng = stream_rng(cfg.seed.wrapping_add(index), 0x63_0000);
    let image = AnalyticImage {
        blobs: (0..cfg.blobs)
            .map(|_| {
                (
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.2..0.8),
                    rng.random_range(0.12..0.25),
                    rng.random_range(0.5..1.0) * if rng.random::<bool>() { 1.0 } else { -1.0 },
                )
            })
            .collect(),
    };
    let constrainer = Constrainer::new(cfg.grid, cfg.grid, cfg.min_segment)?;
    let planted: Vec<f64> = (0..constrainer.raw_len())
        .map(|_| rng.random_range(-0.4..0.4))
        .collect();
    let target = image.render_warped(cfg.size, cfg.size, &constrainer.warp(&planted)?);
    Ok(TemplateEnergy {
        image,
        target,
        constrainer,
        mu: cfg.mu,
    })
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gradient descent and Anderson on the gradient map reach the same point,
/// and that point is stationary.
pub fn check_claim1_suite(cfg: &Claim1Config) -> Result<Vec<SuiteResult>> {
    let started = Instant::now();
    let (mut agree, mut grad, mut steps, mut iters) = (0.0f64, 0.0f64, 0usize, 0usize);
    for i in 0..cfg.instances {
        let e = claim1_instance(cfg, i as u64)?;
        let zero = vec![0.0; e.constrainer.raw_len()];
        let gd = gd_canonicalize(&e, &e.constrainer, &zero, &cfg.gd)?;
        let (fp, stats) = gradient_map_fixed_point(&e, &zero, cfg.eta, &cfg.anderson)?;
        agree = agree.max(sup(&gd.raw, &fp));
        grad = grad
            .max(l2(&e.value_and_grad(&gd.raw)?.1))
            .max(l2(&e.value_and_grad(&fp)?.1));
        steps = steps.max(gd.steps);
        iters = iters.max(stats.iterations);
    }
    Ok(vec![
        SuiteResult::new(
            "claim1_gd_vs_anderson",
            cfg.instances,
            agree,
            cfg.agreement_tol,
            started,
        )
        .with_note(format!("max gd steps {steps}, max anderson iterations {iters}")),
        SuiteResult::new("claim1_stationarity", cfg.instances, grad, cfg.grad_tol, started),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineOutcome {
    pub anderson_iters: Option<usize>,
    pub picard_iters: Option<usize>,
    pub final_residual: f64,
    pub direct_gap: f64,
}

/// `z ↦ A z + b` with `A = ρ M Mᵀ / λ_max(M Mᵀ)` for Gaussian `M`: a random
/// symmetric contraction with spectrum in `[0, ρ]`, the shape of a gradient
/// map's Jacobian. Anderson under `cfg` is compared with Picard iteration
/// to the same residual and with a direct solve of `(I − A) z = b`.
pub fn affine_contraction(dim: usize, rho: f64, seed: u64, cfg: &AndersonConfig) -> Result<AffineOutcome> {
    let mut rng = stream_rng(seed, 0x64_0000);
    let m: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut g = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            g[i * dim + j] = (0..dim).map(|k| m[i * dim + k] * m[j * dim + k]).sum();
        }
    }
    let matvec = |a: &[f64], v: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| (0..dim).map(|j| a[i * dim + j] * v[j]).sum())
            .collect()
    };
    // power iteration; the Rayleigh quotient is accurate to the square of the vector error
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    for _ in 0..10_000 {
        let w = matvec(&g, &v);
        let n = l2(&w);
        v = w.into_iter().map(|x| x / n).collect();
    }
    let lambda: f64 = matvec(&g, &v).iter().zip(&v).map(|(a, b)| a * b).sum();
    let a: Vec<f64> = g.iter().map(|x| rho * x / lambda).collect();
    let b: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let map = |z: &[f64]| -> Vec<f64> {
        (0..dim)
            .map(|i| b[i] + (0..dim).map(|j| a[i * dim + j] * z[j]).sum::<f64>())
            .collect()
    };
    let mut ima: Vec<f64> = a.iter().map(|v| -v).collect();
    for i in 0..dim {
        ima[i * dim + i] += 1.0;
    }
    let direct = solve_small(ima, b.clone()).expect("I - A is nonsingular for rho < 1");
    let target = cfg.tol;
    let z0 = vec![0.0; dim];
    let (z, stats) = anderson(|z| Ok(map(z)), &z0, cfg)?;
    let mut p = z0;
    let mut picard = None;
    for it in 1..=100_000 {
        let next = map(&p);
        let r = l2(&next.iter().zip(&p).map(|(x, y)| x - y).collect::<Vec<_>>());
        p = next;
        if r < target {
            picard = Some(it);
            break;
        }
    }
    Ok(AffineOutcome {
        anderson_iters: stats.converged.then_some(stats.iterations),
        picard_iters: picard,
        final_residual: stats.residual,
        direct_gap: sup(&z, &direct),
    })
}

pub fn check_anderson_affine(cfg: &Claim1Config) -> Result<Vec<SuiteResult>> {
    let started = Instant::now();
    let solver = AndersonConfig {
        window: 5,
        beta: 1.0,
        max_iters: 30,
        tol: 1e-8,
        norm: ResidualNorm::Absolute,
        verbose: false,
    };
    let o = affine_contraction(cfg.affine_dim, cfg.affine_rho, cfg.seed, &solver)?;
    let note = format!(
        "anderson {:?} iterations, picard {:?}",
        o.anderson_iters, o.picard_iters
    );
    let speedup_ok = matches!((o.anderson_iters, o.picard_iters), (Some(a), Some(p)) if 2 * a <= p);
    Ok(vec![
        SuiteResult::new("anderson_affine_residual", 1, o.final_residual, 1e-8, started).with_note(note.clone()),
        SuiteResult::new("anderson_affine_direct_solve", 1, o.direct_gap, 1e-8, started),
        SuiteResult::new(
            "anderson_affine_half_picard",
            1,
            if speedup_ok { 0.0 } else { f64::INFINITY },
            0.5,
            started,
        )
        .with_note(note),
    ])
}

pub fn check_claim1(cfg: &Claim1Config) -> Result<CheckReport> {
    let started = Instant::now();
    let mut suites = check_claim1_suite(cfg)?;
    suites.extend(check_anderson_affine(cfg)?);
    Ok(CheckReport::from_suites(suites, started))
}
