//! Anderson acceleration for fixed points `z = f(z)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    /// `‖f(z) − z‖`
    Absolute,
    /// `‖f(z) − z‖ / (‖f(z)‖ + 1e-12)`
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AndersonConfig {
    /// History window `m`.
    pub window: usize,
    /// Relaxation `β`.
    pub beta: f64,
    /// Iteration budget `j`.
    pub max_iters: usize,
    pub tol: f64,
    pub norm: ResidualNorm,
    /// Emit `{"iter": i, "residual": r}` lines on stderr.
    #[serde(default)]
    pub verbose: bool,
}

impl Default for AndersonConfig {
    fn default() -> Self {
        Self {
            window: 5,
            beta: 1.0,
            max_iters: 10,
            tol: 1e-4,
            norm: ResidualNorm::Relative,
            verbose: false,
        }
    }
}

impl AndersonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.max_iters == 0 {
            return Err(Error::Usage("anderson window and max_iters must be >= 1".into()));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Usage(format!("anderson beta {} not in (0, 1]", self.beta)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Usage("anderson tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveStats {
    /// Updates performed; the initial evaluation is not counted.
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    /// Residual after every update.
    pub residuals: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn residual(g: &[f64], f: &[f64], kind: ResidualNorm) -> f64 {
    match kind {
        ResidualNorm::Absolute => norm(g),
        ResidualNorm::Relative => norm(g) / (norm(f) + 1e-12),
    }
}

/// Solves the `k x k` system `a x = b` by Gaussian elimination with partial
/// pivoting. `a` is row-major and consumed.
pub(crate) fn solve_small(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let k = b.len();
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))?;
        if a[piv * k + col] == 0.0 {
            return None;
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..k {
            let f = a[r * k + col] / a[col * k + col];
            if f == 0.0 {
                continue;
            }
            for c in col..k {
                a[r * k + c] -= f * a[col * k + c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let mut s = b[r];
        for c in r + 1..k {
            s -= a[r * k + c] * x[c];
        }
        x[r] = s / a[r * k + r];
    }
    Some(x)
}

/// Least-squares solution of `min ‖D γ − r‖` for the columns `D` by
/// Householder QR. Columns whose pivot falls below `1e-13` of the largest
/// are treated as dependent and get a zero coefficient.
fn least_squares(cols: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let (n, k) = (rhs.len(), cols.len());
    let mut a: Vec<Vec<f64>> = cols.to_vec();
    let mut r = rhs.to_vec();
    let mut diag = vec![0.0; k];
    for j in 0..k.min(n) {
        let norm = a[j][j..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if a[j][j] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[j][j..].to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|x| x * x).sum();
        diag[j] = alpha;
        if vv == 0.0 {
            continue;
        }
        let reflect = |x: &mut [f64]| {
            let d: f64 = x.iter().zip(&v).map(|(p, q)| p * q).sum::<f64>() * 2.0 / vv;
            x.iter_mut().zip(&v).for_each(|(p, q)| *p -= d * q);
        };
        for col in a.iter_mut().skip(j) {
            reflect(&mut col[j..]);
        }
        reflect(&mut r[j..]);
    }
    let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mut g = vec![0.0; k];
    for j in (0..k.min(n)).rev() {
        if diag[j].abs() <= 1e-13 * scale || scale == 0.0 {
            continue;
        }
        let s: f64 = (j + 1..k).map(|c| a[c][j] * g[c]).sum();
        g[j] = (r[j] - s) / a[j][j];
    }
    g
}

/// Mixing weights summing to one that minimise `‖Σ α_i g_i‖`, via the
/// unconstrained problem over consecutive residual differences.
fn mixing_weights(gs: &[Vec<f64>]) -> Vec<f64> {
    let k = gs.len();
    if k == 1 {
        return vec![1.0];
    }
    let diffs: Vec<Vec<f64>> = gs
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    let gamma = least_squares(&diffs, &gs[k - 1]);
    if gamma.iter().any(|v| !v.is_finite()) {
        let mut w = vec![0.0; k];
        w[k - 1] = 1.0;
        return w;
    }
    // Σ α_i g_i = g_last − Σ γ_i (g_{i+1} − g_i)
    let mut alpha = vec![0.0; k];
    for (i, gi) in gamma.iter().enumerate() {
        alpha[i] += gi;
        alpha[i + 1] -= gi;
    }
    alpha[k - 1] += 1.0;
    alpha
}

/// Runs Anderson mixing from `z0`. Each iteration forms the mixed update
/// from the last `window` iterates, evaluates `f` there and checks the
/// residual. With `window = 1` and `β = 1` this is plain Picard iteration.
pub fn anderson<F>(mut f: F, z0: &[f64], cfg: &AndersonConfig) -> Result<(Vec<f64>, SolveStats)>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if z0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver { iteration: 0 });
    }
    let mut xs: Vec<Vec<f64>> = vec![z0.to_vec()];
    let f0 = f(z0)?;
    if f0.len() != z0.len() {
        return Err(Error::Shape(format!(
            "fixed-point map returned {} values for {} inputs",
            f0.len(),
            z0.len()
        )));
    }
    if f0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver { iteration: 0 });
    }
    let mut gs: Vec<Vec<f64>> = vec![f0.iter().zip(z0).map(|(a, b)| a - b).collect()];
    let mut fs: Vec<Vec<f64>> = vec![f0];
    let mut stats = SolveStats {
        iterations: 0,
        residual: residual(&gs[0], &fs[0], cfg.norm),
        converged: false,
        residuals: Vec::with_capacity(cfg.max_iters),
    };
    for it in 1..=cfg.max_iters {
        let alpha = mixing_weights(&gs);
        let mut x = vec![0.0; z0.len()];
        for (a, (xi, fi)) in alpha.iter().zip(xs.iter().zip(&fs)) {
            for (o, (xv, fv)) in x.iter_mut().zip(xi.iter().zip(fi)) {
                *o += a * (cfg.beta * fv + (1.0 - cfg.beta) * xv);
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver { iteration: it });
        }
        let fx = f(&x)?;
        if fx.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver { iteration: it });
        }
        let g: Vec<f64> = fx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let r = residual(&g, &fx, cfg.norm);
        stats.iterations = it;
        stats.residual = r;
        stats.residuals.push(r);
        if cfg.verbose {
            eprintln!("{}", serde_json::json!({ "iter": it, "residual": r }));
        }
        if xs.len() == cfg.window {
            xs.remove(0);
            fs.remove(0);
            gs.remove(0);
        }
        xs.push(x);
        fs.push(fx);
        gs.push(g);
        if r < cfg.tol {
            stats.converged = true;
            break;
        }
    }
    Ok((xs.pop().expect("nonempty history"), stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_converges_in_one_step() {
        let b = vec![0.3, -1.0, 2.0];
        let (z, s) = anderson(|_| Ok(b.clone()), &[0.0; 3], &AndersonConfig::default()).unwrap();
        assert_eq!(z, b);
        assert_eq!(s.iterations, 1);
        assert_eq!(s.residual, 0.0);
        assert!(s.converged);
    }

    #[test]
    fn window_one_is_picard() {
        let map = |z: &[f64]| -> Result<Vec<f64>> { Ok(z.iter().map(|v| 0.5 * v.cos() + 0.1).collect()) };
        let cfg = AndersonConfig {
            window: 1,
            max_iters: 7,
            tol: 1e-300,
            norm: ResidualNorm::Absolute,
            ..AndersonConfig::default()
        };
        let (z, _) = anderson(map, &[0.2, 0.4], &cfg).unwrap();
        let mut p = vec![0.2, 0.4];
        for _ in 0..8 {
            p = map(&p).unwrap();
        }
        // 7 updates: the last iterate is f^7(z0)
        let mut q = vec![0.2, 0.4];
        for _ in 0..7 {
            q = map(&q).unwrap();
        }
        assert_eq!(z, q);
        assert_ne!(z, p);
    }

    #[test]
    fn non_finite_iterate_reports_iteration() {
        let mut calls = 0;
        let map = |z: &[f64]| -> Result<Vec<f64>> {
            calls += 1;
            Ok(if calls >= 3 {
                vec![f64::NAN; z.len()]
            } else {
                z.iter().map(|v| v * 0.5 + 1.0).collect()
            })
        };
        let err = anderson(map, &[0.0], &AndersonConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Solver { iteration: 2 }));
    }

    #[test]
    fn least_squares_matches_normal_equations_and_drops_dependent_columns() {
        let cols = vec![vec![1.0, 0.0, 1.0], vec![0.0, 1.0, 1.0]];
        let g = least_squares(&cols, &[1.0, 2.0, 0.0]);
        // normal equations: [[2,1],[1,2]] g = [1,2]
        assert!((g[0] - 0.0).abs() < 1e-14 && (g[1] - 1.0).abs() < 1e-14, "{g:?}");
        let dup = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        let g = least_squares(&dup, &[1.0, 2.0]);
        assert!((g[0] - 1.0).abs() < 1e-12 && g[1] == 0.0, "{g:?}");
        let w = mixing_weights(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!((w[0] - 0.5).abs() < 1e-14 && (w[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn small_solver() {
        let x = solve_small(vec![0.0, 2.0, 1.0, 1.0], vec![2.0, 3.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
    }
}
