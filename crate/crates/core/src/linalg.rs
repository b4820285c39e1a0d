//! Matrix-free iterative kernels: symmetric power iteration, restarted GMRES
//! with right preconditioning, and Gauss–Legendre rules.

use crate::error::{Error, Result};
use crate::grid::{dot, l2};

#[derive(Clone, Debug)]
pub struct PowerResult {
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
    /// `‖Sv - θv‖ / θ` at the last iterate (0 for the zero operator).
    pub residual: f64,
    pub iterations: usize,
}

/// Largest eigenvalue of a symmetric positive semidefinite operator.
///
/// Stops once the Rayleigh quotient changes by less than `rel_tol` relative to
/// itself. An operator that maps the start vector to zero reports eigenvalue 0.
pub fn power_iteration(
    start: Vec<f64>,
    mut apply: impl FnMut(&[f64]) -> Vec<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<PowerResult> {
    let mut v = start;
    let n0 = l2(&v);
    if n0 == 0.0 {
        return Err(Error::InvalidSpec("power iteration start vector is zero".into()));
    }
    v.iter_mut().for_each(|x| *x /= n0);
    let mut theta = 0.0f64;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let w = apply(&v);
        let new_theta = dot(&v, &w);
        let wn = l2(&w);
        if wn == 0.0 {
            return Ok(PowerResult { eigenvalue: 0.0, vector: v, residual: 0.0, iterations: it });
        }
        residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - new_theta * b).powi(2))
            .sum::<f64>()
            .sqrt()
            / new_theta.abs().max(f64::MIN_POSITIVE);
        let change = (new_theta - theta).abs() / new_theta.abs().max(f64::MIN_POSITIVE);
        theta = new_theta;
        v = w;
        v.iter_mut().for_each(|x| *x /= wn);
        if change < rel_tol {
            return Ok(PowerResult { eigenvalue: theta, vector: v, residual, iterations: it });
        }
    }
    Err(Error::NoConvergence { what: "power iteration", iterations: max_iter, residual })
}

#[derive(Clone, Debug)]
pub struct GmresStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Restarted GMRES for `A x = b` with right preconditioner `M^{-1}`, i.e. it
/// solves `A M^{-1} y = b`, `x = M^{-1} y`. `x` holds the initial guess on entry.
pub fn gmres(
    apply_a: impl Fn(&[f64]) -> Vec<f64>,
    apply_minv: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    restart: usize,
    max_iter: usize,
) -> Result<GmresStats> {
    let n = b.len();
    let bnorm = l2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(GmresStats { iterations: 0, relative_residual: 0.0 });
    }
    let mut total = 0;
    while total < max_iter {
        let ax = apply_a(x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let beta = l2(&r);
        let rel = beta / bnorm;
        if rel <= rel_tol {
            return Ok(GmresStats { iterations: total, relative_residual: rel });
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            total += 1;
            let z = apply_minv(&basis[k]);
            let mut w = apply_a(&z);
            // Modified Gram-Schmidt.
            for (j, vj) in basis.iter().enumerate() {
                let hjk = dot(&w, vj);
                hess[j][k] = hjk;
                w.iter_mut().zip(vj).for_each(|(wi, vi)| *wi -= hjk * vi);
            }
            let hn = l2(&w);
            hess[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let d = hess[k][k].hypot(hess[k + 1][k]);
            cs[k] = hess[k][k] / d;
            sn[k] = hess[k + 1][k] / d;
            hess[k][k] = d;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            let rel = g[k + 1].abs() / bnorm;
            if rel <= rel_tol || hn == 0.0 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let s: f64 = (i + 1..k_used).map(|j| hess[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / hess[i][i];
        }
        let mut comb = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            comb.iter_mut().zip(&basis[j]).for_each(|(c, v)| *c += yj * v);
        }
        let dx = apply_minv(&comb);
        x.iter_mut().zip(&dx).for_each(|(xi, di)| *xi += di);
    }
    let ax = apply_a(x);
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt() / bnorm;
    if r <= rel_tol {
        Ok(GmresStats { iterations: total, relative_residual: r })
    } else {
        Err(Error::SolverDiverged { iterations: total, residual: r })
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { x } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pnm1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        xs[i] = -x;
        xs[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        ws[i] = w;
        ws[n - 1 - i] = w;
    }
    (xs, ws)
}

/// Composite Gauss–Legendre integral of `f` over `[a, b]` with `panels` panels.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    if b <= a || panels == 0 {
        return 0.0;
    }
    let width = (b - a) / panels as f64;
    let mut s = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * width;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            s += w * f(mid + 0.5 * width * x);
        }
    }
    s * 0.5 * width
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(8);
        let wsum: f64 = rule.1.iter().sum();
        assert!((wsum - 2.0).abs() < 1e-14);
        // degree 15 is exact for 8 points
        let got = integrate(|x| x.powi(14) + x.powi(15), 0.0, 1.0, 1, &rule);
        assert!((got - (1.0 / 15.0 + 1.0 / 16.0)).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_finds_top_eigenvalue() {
        let diag = [1.0, 4.0, 2.5, 0.5];
        let r = power_iteration(vec![1.0; 4], |v| v.iter().zip(&diag).map(|(a, d)| a * d).collect(), 1e-12, 10_000)
            .unwrap();
        assert!((r.eigenvalue - 4.0).abs() < 1e-9);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system() {
        let n = 50;
        let a = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut s = 4.0 * v[i];
                    if i > 0 {
                        s -= 1.5 * v[i - 1];
                    }
                    if i + 1 < n {
                        s -= 0.5 * v[i + 1];
                    }
                    s
                })
                .collect()
        };
        let xt: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a(&xt);
        let mut x = vec![0.0; n];
        let st = gmres(a, |v| v.to_vec(), &b, &mut x, 1e-12, 10, 500).unwrap();
        assert!(st.relative_residual <= 1e-12);
        for (p, q) in x.iter().zip(&xt) {
            assert!((p - q).abs() < 1e-10);
        }
    }
}
