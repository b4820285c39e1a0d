use std::f64::consts::PI;

use proptest::prelude::*;
use sdelab_core::coefficients::{
    analytic_hardy_delta, estimate_form_bound, min_eigenvalue, sym_sqrt, ClassKind, DispersionSpec, FieldSpec,
};
use sdelab_core::Grid;

/// Lowest eigenvalue of the Dirichlet 7-point Laplacian with `m` cell-centred
/// nodes on `[-L, L]`, written out independently of the spectral module.
fn lowest_laplacian_eigenvalue(extent: f64, m: usize) -> f64 {
    let h = 2.0 * extent / m as f64;
    let s = (PI / (2.0 * (m as f64 + 1.0))).sin();
    3.0 * 4.0 / (h * h) * s * s
}

#[test]
fn hardy_delta_matches_closed_form_in_several_dimensions() {
    for (kappa, d) in [(0.25, 3), (0.5, 3), (1.0, 4), (0.3, 5)] {
        let e = analytic_hardy_delta(kappa, d, 1.0).unwrap();
        let want = 4.0 * kappa * kappa / ((d - 2) * (d - 2)) as f64;
        assert!((e.delta - want).abs() < 1e-15, "kappa {kappa} d {d}");
    }
    assert!(analytic_hardy_delta(0.1, 2, 1.0).is_err());
    assert!(analytic_hardy_delta(-0.1, 3, 1.0).is_err());
}

#[test]
fn grid_bound_of_constant_field_is_magnitude_over_shifted_ground_state() {
    let grid = Grid::new(1.5, 10).unwrap();
    let b = FieldSpec::constant(&[0.3, 0.4, 0.0]).unwrap();
    let lambda = 2.0;
    let ground = lambda + lowest_laplacian_eigenvalue(1.5, 10);
    let fd = estimate_form_bound(&b, ClassKind::FDelta, lambda, &grid).unwrap();
    assert!((fd.delta - 0.25 / ground).abs() < 1e-5 * fd.delta, "{} vs {}", fd.delta, 0.25 / ground);
    let weak = estimate_form_bound(&b, ClassKind::WeakFHalf, lambda, &grid).unwrap();
    let want = (0.5 / ground.sqrt()).sqrt();
    assert!((weak.delta - want).abs() < 1e-5 * want);
}

#[test]
fn zero_field_has_zero_bound() {
    let grid = Grid::new(1.0, 6).unwrap();
    for kind in [ClassKind::FDelta, ClassKind::Kato, ClassKind::WeakFHalf] {
        assert_eq!(estimate_form_bound(&FieldSpec::zero(3), kind, 1.0, &grid).unwrap().delta, 0.0);
    }
}

#[test]
fn radial_projection_matrix_has_expected_spectrum() {
    // a = I + c x xᵀ/|x|²: eigenvalue 1 + c along x, 1 across.
    let c = 0.7;
    let disp = DispersionSpec::radial_projection(3, c).unwrap();
    let x = [0.3, -1.2, 0.5];
    let a = disp.a(&x).unwrap();
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let ax: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
    for i in 0..3 {
        assert!((ax[i] - (1.0 + c) * x[i]).abs() < 1e-12);
    }
    let tr: f64 = (0..3).map(|i| a[i * 4]).sum();
    assert!((tr - (3.0 + c)).abs() < 1e-12, "{tr} {r2}");
    assert!((min_eigenvalue(&a, 3) - 1.0).abs() < 1e-10);
}

#[test]
fn deserialized_dispersion_is_normalized_on_load() {
    let mut disp: DispersionSpec = serde_json::from_str(r#"{"d": 3, "kind": "radial_projection", "c": -0.5}"#).unwrap();
    assert_eq!(disp.rescale, 1.0);
    disp.load_data(std::path::Path::new(".")).unwrap();
    assert!((disp.rescale - 2.0).abs() < 1e-12);
    let a = disp.a(&[0.4, 0.1, -0.3]).unwrap();
    assert!((min_eigenvalue(&a, 3) - 1.0).abs() < 1e-10);
    assert_eq!(disp, DispersionSpec::radial_projection(3, -0.5).unwrap());
}

fn spd() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(-1.0f64..1.0, 9), 0.1f64..2.0).prop_map(|(m, shift)| {
        let mut a = vec![0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                a[i * 3 + j] = (0..3).map(|k| m[i * 3 + k] * m[j * 3 + k]).sum::<f64>();
            }
            a[i * 4] += shift;
        }
        a
    })
}

proptest! {
    #[test]
    fn symmetric_root_squares_back(a in spd()) {
        let mut s = vec![0.0; 9];
        sym_sqrt(&a, 3, &mut s);
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((s[i * 3 + j] - s[j * 3 + i]).abs() < 1e-10);
                let sq: f64 = (0..3).map(|k| s[i * 3 + k] * s[k * 3 + j]).sum();
                prop_assert!((sq - a[i * 3 + j]).abs() < 1e-9 * (1.0 + a[i * 3 + j].abs()));
            }
        }
    }

    #[test]
    fn min_eigenvalue_bounds_rayleigh_quotients(a in spd(), v in prop::collection::vec(-1.0f64..1.0, 3)) {
        let n2: f64 = v.iter().map(|x| x * x).sum();
        prop_assume!(n2 > 1e-6);
        let q: f64 = (0..3).map(|i| (0..3).map(|j| v[i] * a[i * 3 + j] * v[j]).sum::<f64>()).sum::<f64>() / n2;
        prop_assert!(min_eigenvalue(&a, 3) <= q + 1e-10);
        prop_assert!(min_eigenvalue(&a, 3) > 0.0);
    }

    #[test]
    fn radial_projection_is_bounded_below_by_identity(c in 0.0f64..3.0, x in prop::collection::vec(-3.0f64..3.0, 3)) {
        prop_assume!(x.iter().map(|v| v * v).sum::<f64>() > 1e-4);
        let a = DispersionSpec::radial_projection(3, c).unwrap().a(&x).unwrap();
        prop_assert!(min_eigenvalue(&a, 3) >= 1.0 - 1e-10);
    }
}
