use std::f64::consts::PI;

use proptest::prelude::*;
use sdelab_core::coefficients::{DispersionSpec, FieldSpec, MatrixTarget};
use sdelab_core::grid::sup_norm;
use sdelab_core::regularization::{mollify_dispersion, mollify_field, EpsRule, MollificationSchedule};
use sdelab_core::semigroup::{
    apply_semigroup, assemble_operator, bump, fit_mu0, neumann_resolvent, solve_resolvent, DiscreteOperator,
    SolverOptions,
};
use sdelab_core::Grid;

fn grid() -> Grid {
    Grid::new(1.0, 10).unwrap()
}

/// Operator of a mollified Hardy drift and radial projection matrix.
fn singular_operator(kappa: f64, c: f64) -> DiscreteOperator {
    let g = grid();
    let s = MollificationSchedule::new(4, &EpsRule::inverse_square()).unwrap();
    let b = mollify_field(&FieldSpec::hardy(3, kappa, 1.0).unwrap(), &s, &g).unwrap();
    let a = mollify_dispersion(&DispersionSpec::radial_projection(3, c).unwrap(), &s, &g, MatrixTarget::A).unwrap();
    assemble_operator(&a, &b, &g).unwrap()
}

/// Sine mode `(k1, k2, k3)` on the cell-centred grid and its `-Δ_h` eigenvalue.
fn sine_mode(g: &Grid, k: [usize; 3]) -> (Vec<f64>, f64) {
    let m = g.nodes;
    let h = g.spacing();
    let w = |kk: usize, i: usize| (PI * (kk * (i + 1)) as f64 / (m + 1) as f64).sin();
    let mut v = vec![0.0; g.len()];
    for idx in 0..g.len() {
        let [i, j, l] = g.unravel(idx);
        v[idx] = w(k[0], i) * w(k[1], j) * w(k[2], l);
    }
    let lam = k.iter().map(|&kk| 4.0 / (h * h) * (PI * kk as f64 / (2.0 * (m + 1) as f64)).sin().powi(2)).sum();
    (v, lam)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn free_operator_acts_diagonally_on_sine_modes() {
    let g = grid();
    let op = assemble_operator(&DispersionSpec::identity(3), &FieldSpec::zero(3), &g).unwrap();
    assert_eq!(op.audit.violating_rows, 0);
    for k in [[1, 1, 1], [2, 1, 3], [5, 4, 1]] {
        let (v, lam) = sine_mode(&g, k);
        let lv = op.apply(&v);
        let want: Vec<f64> = v.iter().map(|x| lam * x).collect();
        assert!(max_abs_diff(&lv, &want) < 1e-9 * lam, "mode {k:?}");
        let u = solve_resolvent(&op, 3.0, &v, &SolverOptions::default()).unwrap().u;
        let want: Vec<f64> = v.iter().map(|x| x / (3.0 + lam)).collect();
        assert!(max_abs_diff(&u, &want) < 1e-10);
        let p = apply_semigroup(&op, 0.05, &v, 4, &SolverOptions::default()).unwrap();
        let factor = (1.0 + 0.05 / 4.0 * lam).powi(-4);
        let want: Vec<f64> = v.iter().map(|x| factor * x).collect();
        assert!(max_abs_diff(&p, &want) < 1e-10);
    }
}

#[test]
fn resolvent_identity_holds_for_singular_coefficients() {
    // R(μ) - R(ν) = (ν - μ) R(μ) R(ν).
    let op = singular_operator(0.25, 0.3);
    assert_eq!(op.audit.violating_rows, 0);
    let g = grid();
    let f = bump(&g, [0.2, -0.1, 0.0], 0.6);
    let opts = SolverOptions::default();
    let (mu, nu) = (2.0, 15.0);
    let rmu = solve_resolvent(&op, mu, &f, &opts).unwrap().u;
    let rnu = solve_resolvent(&op, nu, &f, &opts).unwrap().u;
    let rmu_rnu = solve_resolvent(&op, mu, &rnu, &opts).unwrap().u;
    let lhs: Vec<f64> = rmu.iter().zip(&rnu).map(|(a, b)| a - b).collect();
    let rhs: Vec<f64> = rmu_rnu.iter().map(|v| (nu - mu) * v).collect();
    assert!(max_abs_diff(&lhs, &rhs) < 1e-9 * sup_norm(&lhs), "{}", max_abs_diff(&lhs, &rhs));
}

#[test]
fn resolvent_of_one_is_a_contraction_for_the_mmatrix() {
    let op = singular_operator(0.5, 1.0);
    let fit = fit_mu0(&op, &[1.0, 4.0, 16.0, 64.0], &SolverOptions::default()).unwrap();
    for (mu, s) in fit.mu_list.iter().zip(&fit.sup_of_resolvent_of_one) {
        assert!(mu * s <= 1.0 + 1e-9, "mu {mu} sup {s}");
    }
    assert!(fit.mu0 < 1e-8);
}

#[test]
fn neumann_series_reproduces_the_direct_solve() {
    let g = grid();
    let s = MollificationSchedule::new(4, &EpsRule::inverse_square()).unwrap();
    let b = mollify_field(&FieldSpec::hardy(3, 0.1, 1.0).unwrap(), &s, &g).unwrap();
    let a = mollify_dispersion(&DispersionSpec::radial_projection(3, 0.2).unwrap(), &s, &g, MatrixTarget::A).unwrap();
    let f = bump(&g, [0.0; 3], 0.7);
    let r = neumann_resolvent(&a, &b, 1.0, &f, &g, 200, &SolverOptions::default()).unwrap();
    assert!(r.rel_sup_diff < 1e-8, "{}", r.rel_sup_diff);
    assert!(r.term_norms.windows(2).skip(1).all(|w| w[1] < w[0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn resolvent_preserves_positivity(
        values in prop::collection::vec(0.0f64..1.0, 1000),
        mu in 0.5f64..50.0,
        kappa in 0.0f64..1.0,
    ) {
        let op = singular_operator(kappa, 0.5);
        let u = solve_resolvent(&op, mu, &values, &SolverOptions::default()).unwrap().u;
        let floor = u.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!(floor >= -1e-10 * sup_norm(&u).max(1.0), "min {}", floor);
        prop_assert!(mu * sup_norm(&u) <= sup_norm(&values) * (1.0 + 1e-9));
    }
}
