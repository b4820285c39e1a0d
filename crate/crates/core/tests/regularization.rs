use proptest::prelude::*;
use sdelab_core::coefficients::{min_eigenvalue, DispersionSpec, FieldSpec, MatrixTarget};
use sdelab_core::regularization::{
    eta, gaussian_weights, mollify_dispersion, mollify_field, mollify_radial_dispersion, mollify_radial_field,
    verify_bound_preservation, EpsRule, MollificationSchedule,
};
use sdelab_core::Grid;

fn schedule(n: u32) -> MollificationSchedule {
    MollificationSchedule::new(n, &EpsRule::inverse_square()).unwrap()
}

#[test]
fn weights_are_a_normalized_symmetric_gaussian() {
    let (eps, h) = (0.05, 0.1);
    let w = gaussian_weights(eps, h);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    let k = w.len() / 2;
    for i in 0..k {
        assert_eq!(w[i], w[2 * k - i]);
    }
    // Discrete second moment of e^{εΔ} in one dimension is 2ε.
    let m2: f64 = w.iter().enumerate().map(|(i, v)| v * ((i as f64 - k as f64) * h).powi(2)).sum();
    assert!((m2 - 2.0 * eps).abs() < 1e-6, "{m2}");
}

#[test]
fn cutoff_profile() {
    assert_eq!(eta(3, 0.0), 1.0);
    assert_eq!(eta(3, 2.999), 1.0);
    assert!((eta(3, 3.25) - 0.75).abs() < 1e-15);
    assert_eq!(eta(3, 4.0), 0.0);
    assert_eq!(eta(3, 10.0), 0.0);
}

#[test]
fn schedule_must_decrease_and_resolve() {
    assert!(MollificationSchedule::list(&[4, 8, 16], &EpsRule::inverse_square()).is_ok());
    assert!(MollificationSchedule::list(&[8, 4], &EpsRule::inverse_square()).is_err());
    // h² = 0.25 > ε_4 = 1/16.
    let coarse = Grid::new(2.0, 8).unwrap();
    assert!(mollify_field(&FieldSpec::constant(&[1.0, 0.0, 0.0]).unwrap(), &schedule(4), &coarse).is_err());
}

#[test]
fn constant_field_is_left_unchanged() {
    // Grid plus kernel stays inside |x| < n, so the indicator is identically one.
    let grid = Grid::new(1.0, 20).unwrap();
    let v = [0.5, -1.25, 2.0];
    let b = mollify_field(&FieldSpec::constant(&v).unwrap(), &schedule(8), &grid).unwrap();
    for idx in (0..grid.len()).step_by(37) {
        let got = b.eval(&grid.node(idx)).unwrap();
        for c in 0..3 {
            assert!((got[c] - v[c]).abs() < 1e-12, "{got:?}");
        }
    }
}

#[test]
fn exact_radial_hardy_agrees_with_grid_mollification_away_from_origin() {
    let grid = Grid::new(1.0, 20).unwrap();
    let s = schedule(4);
    let base = FieldSpec::hardy(3, 0.25, 1.0).unwrap();
    let exact = mollify_radial_field(&base, &s).unwrap();
    let sampled = mollify_field(&base, &s, &grid).unwrap();
    let mut worst: f64 = 0.0;
    for idx in 0..grid.len() {
        let x = grid.node(idx);
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.6 {
            continue;
        }
        let (a, b) = (exact.eval(&x).unwrap(), sampled.eval(&x).unwrap());
        let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / scale);
    }
    assert!(worst < 0.02, "relative difference {worst}");
}

#[test]
fn exact_radial_hardy_is_rotation_equivariant() {
    let b = mollify_radial_field(&FieldSpec::hardy(3, 0.4, -1.0).unwrap(), &schedule(4)).unwrap();
    let x = [0.3, -0.7, 0.2];
    let y = [-0.7, 0.2, 0.3];
    let (bx, by) = (b.eval(&x).unwrap(), b.eval(&y).unwrap());
    assert!((bx[1] - by[0]).abs() < 1e-12 && (bx[2] - by[1]).abs() < 1e-12 && (bx[0] - by[2]).abs() < 1e-12);
    // sign -1 points b towards the origin.
    let dot: f64 = (0..3).map(|i| bx[i] * x[i]).sum();
    assert!(dot < 0.0);
}

#[test]
fn exact_radial_dispersion_stays_above_identity() {
    for target in [MatrixTarget::A, MatrixTarget::Sigma] {
        let a = mollify_radial_dispersion(&DispersionSpec::radial_projection(3, 0.8).unwrap(), &schedule(4), target).unwrap();
        for x in [[0.01, 0.0, 0.0], [0.3, 0.4, -0.1], [2.0, -3.0, 1.0], [5.0, 0.0, 0.0]] {
            assert!(min_eigenvalue(&a.a(&x).unwrap(), 3) >= 1.0 - 1e-10);
        }
    }
}

#[test]
fn bounded_field_keeps_its_relative_bound() {
    let grid = Grid::new(1.0, 12).unwrap();
    let base = FieldSpec::bounded_box(3, 1.5, None, None).unwrap();
    let t = verify_bound_preservation(&base, &[4, 5], &EpsRule::inverse_square(), 1.0, &grid).unwrap();
    for r in &t.rows {
        assert!(r.ratio <= 1.0 + 1e-6, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn mollified_drift_never_exceeds_the_cap(kappa in 0.0f64..6.0, m in 0.0f64..7.0, n in 4u32..6) {
        let grid = Grid::new(1.0, 12).unwrap();
        let base = FieldSpec::sum(vec![
            FieldSpec::hardy(3, kappa, 1.0).unwrap(),
            FieldSpec::bounded_box(3, m, Some(vec![0.0, 1.0, 0.0]), None).unwrap(),
        ])
        .unwrap();
        let b = mollify_field(&base, &schedule(n), &grid).unwrap();
        let sup = b.magnitude_on(&grid).unwrap().into_iter().fold(0.0f64, f64::max);
        prop_assert!(sup <= n as f64 * (1.0 + 1e-12), "sup {} n {}", sup, n);
    }

    #[test]
    fn mollified_matrix_stays_above_identity(c in 0.0f64..3.0, n in 4u32..6, sigma in any::<bool>()) {
        let grid = Grid::new(1.0, 12).unwrap();
        let target = if sigma { MatrixTarget::Sigma } else { MatrixTarget::A };
        let disp = DispersionSpec::radial_projection(3, c).unwrap();
        let an = mollify_dispersion(&disp, &schedule(n), &grid, target).unwrap();
        for idx in (0..grid.len()).step_by(11) {
            let a = an.a(&grid.node(idx)).unwrap();
            prop_assert!(min_eigenvalue(&a, 3) >= 1.0 - 1e-10);
        }
    }
}
