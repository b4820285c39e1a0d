use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::operator::{assemble_operator, DiscreteOperator};
use super::resolvent::{solve_resolvent, ResolventSolution, SolverOptions};
use crate::coefficients::{estimate_form_bound, ClassKind, DispersionSpec, FieldSpec, POWER_MAX_ITER, POWER_REL_TOL};
use crate::error::{Error, Result};
use crate::grid::{l2, sup_norm, Grid};
use crate::linalg::power_iteration;
use crate::spectral::{neg_laplacian, DirichletSpectrum};

/// Relative size of the last kept series term.
pub const SERIES_TOL: f64 = 1e-10;

/// `P v = Λ_h v - (-Δ_h) v`, the discrete `-(a-I):∇² + b·∇`.
fn perturbation(op: &DiscreteOperator, v: &[f64]) -> Vec<f64> {
    let mut lap = vec![0.0; v.len()];
    neg_laplacian(&op.grid, v, &mut lap);
    op.apply(v).iter().zip(&lap).map(|(a, l)| a - l).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannResult {
    pub solution: ResolventSolution,
    pub terms: usize,
    /// `‖(-PR)^k f‖_2` for every evaluated term.
    pub term_norms: Vec<f64>,
    pub a_dev: f64,
    pub delta_est: f64,
    /// `‖u_series - u_direct‖_∞ / ‖u_direct‖_∞`.
    pub rel_sup_diff: f64,
}

/// `(μ + Λ_h)^{-1} f = R (1 + P R)^{-1} f` with `R = (μ - Δ_h)^{-1}`, the inner
/// inverse expanded as `Σ_k (-PR)^k`. Requires `‖a - I‖_∞ + δ_est < 1` with
/// `δ_est` the form bound of `b` at `λ = μ`.
pub fn neumann_resolvent(
    a: &DispersionSpec,
    b: &FieldSpec,
    mu: f64,
    f: &[f64],
    grid: &Grid,
    max_terms: usize,
    opts: &SolverOptions,
) -> Result<NeumannResult> {
    let a_dev = a.a_dev_on(grid)?;
    let delta_est = estimate_form_bound(b, ClassKind::FDelta, mu, grid)?.delta;
    if a_dev + delta_est >= 1.0 {
        return Err(Error::PreconditionViolated(format!("|a-I|_inf + delta = {} >= 1", a_dev + delta_est)));
    }
    let op = assemble_operator(a, b, grid)?;
    let sp = DirichletSpectrum::new(grid);
    let f_norm = l2(f);
    let mut sum = f.to_vec();
    let mut term = f.to_vec();
    let mut norms = vec![f_norm];
    let mut terms = 1;
    while f_norm > 0.0 && terms < max_terms {
        let next: Vec<f64> = perturbation(&op, &sp.resolvent(mu, &term)).into_iter().map(|v| -v).collect();
        let n = l2(&next);
        if n >= *norms.last().unwrap() {
            return Err(Error::SeriesDivergence { term: terms, norm: n });
        }
        sum.iter_mut().zip(&next).for_each(|(s, t)| *s += t);
        norms.push(n);
        term = next;
        terms += 1;
        if n < SERIES_TOL * f_norm {
            break;
        }
    }
    let u = sp.resolvent(mu, &sum);
    let direct = solve_resolvent(&op, mu, f, opts)?;
    let du = sup_norm(&direct.u);
    let diff = sup_norm(&u.iter().zip(&direct.u).map(|(x, y)| x - y).collect::<Vec<_>>());
    let shifted = op.apply_shifted(mu, &u);
    let residual = l2(&shifted.iter().zip(f).map(|(x, y)| x - y).collect::<Vec<_>>()) / f_norm.max(f64::MIN_POSITIVE);
    Ok(NeumannResult {
        solution: ResolventSolution { u, mu, residual, iterations: terms },
        terms,
        term_norms: norms,
        a_dev,
        delta_est,
        rel_sup_diff: if du > 0.0 { diff / du } else { diff },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationNorm {
    pub norm: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// `‖P (μ - Δ_h)^{-1}‖_{2→2}` by power iteration on `R Pᵀ P R`, started from a
/// fixed pseudo-random vector so that every mode is present.
pub fn perturbation_norm_of(op: &DiscreteOperator, mu: f64) -> Result<PerturbationNorm> {
    if !(mu > 0.0) {
        return Err(Error::InvalidSpec(format!("mu must be positive, got {mu}")));
    }
    let grid = &op.grid;
    let sp = DirichletSpectrum::new(grid);
    let at = op.matrix.transpose();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let start: Vec<f64> = (0..grid.len()).map(|_| rng.random::<f64>() + 0.5).collect();
    let r = power_iteration(
        start,
        |v| {
            let pr = perturbation(op, &sp.resolvent(mu, v));
            let mut lap = vec![0.0; pr.len()];
            neg_laplacian(grid, &pr, &mut lap);
            let ptp: Vec<f64> = at.matvec(&pr).iter().zip(&lap).map(|(a, l)| a - l).collect();
            sp.resolvent(mu, &ptp)
        },
        POWER_REL_TOL,
        POWER_MAX_ITER,
    )?;
    Ok(PerturbationNorm { norm: r.eigenvalue.max(0.0).sqrt(), iterations: r.iterations, residual: r.residual })
}

pub fn perturbation_norm(a: &DispersionSpec, b: &FieldSpec, mu: f64, grid: &Grid) -> Result<PerturbationNorm> {
    perturbation_norm_of(&assemble_operator(a, b, grid)?, mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_case_is_a_single_term() {
        let g = Grid::new(1.0, 8).unwrap();
        let f = g.sample(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp());
        let r = neumann_resolvent(&DispersionSpec::identity(3), &FieldSpec::zero(3), 2.0, &f, &g, 50, &SolverOptions::default())
            .unwrap();
        assert_eq!(r.terms, 2);
        assert!(r.term_norms[1] < 1e-12 * r.term_norms[0]);
        assert!(r.rel_sup_diff < 1e-10);
        let p = perturbation_norm(&DispersionSpec::identity(3), &FieldSpec::zero(3), 1.0, &g).unwrap();
        assert!(p.norm < 1e-10);
    }

    #[test]
    fn large_perturbation_is_refused() {
        let g = Grid::new(1.0, 8).unwrap();
        let f = vec![1.0; g.len()];
        let a = DispersionSpec::radial_projection(3, 1.2).unwrap();
        let r = neumann_resolvent(&a, &FieldSpec::zero(3), 1.0, &f, &g, 50, &SolverOptions::default());
        assert!(matches!(r, Err(Error::PreconditionViolated(_))));
    }
}
