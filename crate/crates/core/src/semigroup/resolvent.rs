use serde::{Deserialize, Serialize};

use super::estimates::WeightSpec;
use super::operator::DiscreteOperator;
use crate::error::{Error, Result};
use crate::grid::{gradient_magnitude, lq_norm, sup_norm, Grid};
use crate::linalg::gmres;
use crate::spectral::DirichletSpectrum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative residual target. Tighter than the `1e-8` contract so that
    /// solver noise stays below the `-1e-10` positivity floor.
    pub rel_tol: f64,
    pub restart: usize,
    pub max_iter: usize,
    /// Solves at `μ ≤ mu0` are refused.
    pub mu0: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-12, restart: 40, max_iter: 4000, mu0: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventSolution {
    pub u: Vec<f64>,
    pub mu: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionNorms {
    pub u_q: f64,
    pub grad_q: f64,
    /// `‖∇u‖_{qd/(d-2)}`.
    pub grad_qj: f64,
    pub sup: f64,
    pub weighted_sup: Option<f64>,
}

impl ResolventSolution {
    pub fn norms(&self, grid: &Grid, q: f64, weight: Option<&WeightSpec>) -> SolutionNorms {
        let g = gradient_magnitude(grid, &self.u);
        SolutionNorms {
            u_q: lq_norm(grid, &self.u, q),
            grad_q: lq_norm(grid, &g, q),
            grad_qj: lq_norm(grid, &g, 3.0 * q),
            sup: sup_norm(&self.u),
            weighted_sup: weight.map(|w| w.weighted_sup(grid, &self.u)),
        }
    }
}

/// `(μ + s(-Δ_h))^{-1}` with `s` the mean diffusion of the operator.
fn preconditioner<'a>(op: &'a DiscreteOperator, sp: &'a DirichletSpectrum, mu: f64) -> impl Fn(&[f64]) -> Vec<f64> + 'a {
    let s = op.mean_diffusion;
    move |v: &[f64]| sp.apply_fn(v, |l| 1.0 / (mu + s * l))
}

fn check_mu(mu: f64, opts: &SolverOptions) -> Result<()> {
    let mu0 = opts.mu0.unwrap_or(0.0);
    if !(mu > mu0) {
        return Err(Error::MuTooSmall { mu, mu0 });
    }
    Ok(())
}

fn solve_with(op: &DiscreteOperator, sp: &DirichletSpectrum, mu: f64, f: &[f64], guess: Option<&[f64]>, opts: &SolverOptions) -> Result<ResolventSolution> {
    if f.len() != op.grid.len() {
        return Err(Error::GridMismatch);
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSpec("resolvent input is not finite".into()));
    }
    let mut u = guess.map_or_else(|| vec![0.0; f.len()], |g| g.to_vec());
    let stats = gmres(|v| op.apply_shifted(mu, v), preconditioner(op, sp, mu), f, &mut u, opts.rel_tol, opts.restart, opts.max_iter)?;
    Ok(ResolventSolution { u, mu, residual: stats.relative_residual, iterations: stats.iterations })
}

/// `u = (μ + Λ_h)^{-1} f` by right-preconditioned GMRES.
pub fn solve_resolvent(op: &DiscreteOperator, mu: f64, f: &[f64], opts: &SolverOptions) -> Result<ResolventSolution> {
    check_mu(mu, opts)?;
    let sp = DirichletSpectrum::new(&op.grid);
    solve_with(op, &sp, mu, f, None, opts)
}

/// `((I + τΛ_h)^{-1})^steps f` with `τ = t/steps`.
pub fn apply_semigroup(op: &DiscreteOperator, t: f64, f: &[f64], steps: usize, opts: &SolverOptions) -> Result<Vec<f64>> {
    if steps == 0 || !(t > 0.0) {
        return Err(Error::InvalidSpec("semigroup needs t > 0 and steps >= 1".into()));
    }
    let sp = DirichletSpectrum::new(&op.grid);
    let inv_tau = steps as f64 / t;
    let mut u = f.to_vec();
    for _ in 0..steps {
        let rhs: Vec<f64> = u.iter().map(|v| v * inv_tau).collect();
        u = solve_with(op, &sp, inv_tau, &rhs, Some(&u), opts)?.u;
    }
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mu0Fit {
    pub mu0: f64,
    pub mu_list: Vec<f64>,
    /// `‖(μ + Λ_h)^{-1} 1‖_∞`, the exact `∞ → ∞` norm for a nonnegative inverse.
    pub sup_of_resolvent_of_one: Vec<f64>,
}

/// Smallest `μ₀ ≥ 0` with `‖(μ + Λ_h)^{-1}‖_{∞→∞} ≤ (μ - μ₀)^{-1}` on the `μ` list.
pub fn fit_mu0(op: &DiscreteOperator, mus: &[f64], opts: &SolverOptions) -> Result<Mu0Fit> {
    let sp = DirichletSpectrum::new(&op.grid);
    let one = vec![1.0; op.grid.len()];
    let mut sups = Vec::with_capacity(mus.len());
    let mut mu0 = 0.0f64;
    for &mu in mus {
        check_mu(mu, &SolverOptions { mu0: None, ..opts.clone() })?;
        let s = sup_norm(&solve_with(op, &sp, mu, &one, None, opts)?.u);
        mu0 = mu0.max(mu - 1.0 / s);
        sups.push(s);
    }
    Ok(Mu0Fit { mu0, mu_list: mus.to_vec(), sup_of_resolvent_of_one: sups })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{DispersionSpec, FieldSpec};
    use crate::semigroup::assemble_operator;

    fn free(g: &Grid) -> DiscreteOperator {
        assemble_operator(&DispersionSpec::identity(3), &FieldSpec::zero(3), g).unwrap()
    }

    #[test]
    fn eigenvector_input_is_scaled() {
        let g = Grid::new(1.0, 10).unwrap();
        let op = free(&g);
        let sp = DirichletSpectrum::new(&g);
        let k = [2, 1, 3];
        let f = sp.eigenvector(k);
        let u = solve_resolvent(&op, 5.0, &f, &SolverOptions::default()).unwrap();
        let s = 1.0 / (5.0 + sp.eigenvalue(k));
        for (a, b) in u.u.iter().zip(&f) {
            assert!((a - s * b).abs() < 1e-10);
        }
    }

    #[test]
    fn mu_below_mu0_is_refused() {
        let g = Grid::new(1.0, 4).unwrap();
        let opts = SolverOptions { mu0: Some(2.0), ..Default::default() };
        assert!(matches!(solve_resolvent(&free(&g), 1.0, &vec![1.0; g.len()], &opts), Err(Error::MuTooSmall { .. })));
    }

    #[test]
    fn free_mu0_is_zero() {
        let g = Grid::new(1.0, 8).unwrap();
        let fit = fit_mu0(&free(&g), &[1.0, 10.0], &SolverOptions::default()).unwrap();
        assert_eq!(fit.mu0, 0.0);
    }
}
