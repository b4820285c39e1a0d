use proptest::prelude::*;
use sdelab_core::admissibility::{
    check_cond0, classify_hardy_regime, effective_delta, q_grid, search_q, Regime, Variant,
};

#[test]
fn second_margin_at_q_two_is_one_minus_delta() {
    // With γ = δ_a = |a-I| = 0 the cross terms vanish at q = 2.
    for delta in [0.0, 0.1, 0.5, 0.99, 1.3] {
        let r = check_cond0(3, 2.0, delta, 0.0, 0.0, 0.0).unwrap();
        assert!((r.margin2 - (1.0 - delta)).abs() < 1e-14);
        assert_eq!(r.margin1, 1.0);
        // q must exceed max(2, d-2) strictly.
        assert!(!r.feasible);
    }
}

#[test]
fn pure_drift_reduces_to_delta_below_one() {
    let qs = q_grid(3, None, 6.0, 0.01);
    for delta in [0.05, 0.3, 0.6, 0.9, 0.97] {
        assert!(search_q(3, delta, 0.0, 0.0, 0.0, &qs).unwrap().feasible, "delta {delta}");
    }
    for delta in [1.0, 1.2, 2.0] {
        assert!(!search_q(3, delta, 0.0, 0.0, 0.0, &qs).unwrap().feasible, "delta {delta}");
    }
}

#[test]
fn effective_delta_adds_the_variant_terms() {
    assert_eq!(effective_delta(Variant::Raw, 0.2, 0.1, None).unwrap(), 0.2);
    assert!((effective_delta(Variant::Ito, 0.2, 0.1, None).unwrap() - 0.3).abs() < 1e-15);
    assert!((effective_delta(Variant::Stratonovich, 0.2, 0.1, Some(0.05)).unwrap() - 0.35).abs() < 1e-15);
    assert!(effective_delta(Variant::Stratonovich, 0.2, 0.1, None).is_err());
    assert!(effective_delta(Variant::Ito, -0.2, 0.1, None).is_err());
}

#[test]
fn hardy_regimes_in_three_dimensions() {
    // √δ = 2κ: subcritical below κ = 1/2, no solution from κ = 3.
    let label = |kappa: f64| classify_hardy_regime(4.0 * kappa * kappa, 3).unwrap().label;
    assert_eq!(label(0.1), Regime::Subcritical);
    assert_eq!(label(0.49), Regime::Subcritical);
    assert_eq!(label(0.5), Regime::Indeterminate);
    assert_eq!(label(2.9), Regime::Indeterminate);
    assert_eq!(label(3.0), Regime::NoSolution);
    assert_eq!(label(3.5), Regime::NoSolution);
    assert!(classify_hardy_regime(0.1, 2).is_err());
}

#[test]
fn q_grid_starts_past_the_floor() {
    let qs = q_grid(3, None, 3.0, 0.25);
    assert_eq!(qs, vec![2.25, 2.5, 2.75, 3.0]);
    assert!(q_grid(6, None, 6.0, 0.5).iter().all(|q| *q > 4.0));
}

proptest! {
    #[test]
    fn margins_decrease_as_bounds_grow(
        q in 2.01f64..6.0,
        delta in 0.0f64..1.5,
        gamma in 0.0f64..0.5,
        da in 0.0f64..0.5,
        dev in 0.0f64..1.0,
        bump in 0.0f64..0.5,
    ) {
        let base = check_cond0(3, q, delta, gamma, da, dev).unwrap();
        for r in [
            check_cond0(3, q, delta + bump, gamma, da, dev).unwrap(),
            check_cond0(3, q, delta, gamma + bump, da, dev).unwrap(),
            check_cond0(3, q, delta, gamma, da + bump, dev).unwrap(),
            check_cond0(3, q, delta, gamma, da, dev + bump).unwrap(),
        ] {
            prop_assert!(r.margin1 <= base.margin1 + 1e-12);
            prop_assert!(r.margin2 <= base.margin2 + 1e-12);
            prop_assert!(!r.feasible || base.feasible);
        }
    }

    #[test]
    fn search_reports_a_feasible_witness(delta in 0.0f64..1.2, gamma in 0.0f64..0.1) {
        let qs = q_grid(3, None, 6.0, 0.05);
        let r = search_q(3, delta, gamma, 0.0, 0.0, &qs).unwrap();
        prop_assert_eq!(r.feasible, !r.feasible_qs.is_empty());
        for q in &r.feasible_qs {
            prop_assert!(check_cond0(3, *q, delta, gamma, 0.0, 0.0).unwrap().feasible);
        }
        if let Some(q) = r.q_star {
            prop_assert!(r.feasible_qs.contains(&q));
        }
    }
}
