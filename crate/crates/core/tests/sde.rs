use proptest::prelude::*;
use sdelab_core::admissibility::stratonovich_correction;
use sdelab_core::coefficients::{DerivativeMode, DispersionSpec, FieldSpec, MatrixTarget};
use sdelab_core::regularization::{mollify_radial_dispersion, mollify_radial_field, EpsRule, MollificationSchedule};
use sdelab_core::sde::{
    martingale_report, mean_se, median_se, simulate_ensemble, EnsembleSpec, MartingaleIntegrand, Observable, Scheme,
};

fn hardy_spec(paths: usize, seed: u64) -> EnsembleSpec {
    let s = MollificationSchedule::new(8, &EpsRule::inverse_square()).unwrap();
    let b = mollify_radial_field(&FieldSpec::hardy(3, 0.2, 1.0).unwrap(), &s).unwrap();
    let a = mollify_radial_dispersion(&DispersionSpec::radial_projection(3, 0.3).unwrap(), &s, MatrixTarget::A).unwrap();
    let mut spec = EnsembleSpec::new(b, a, [0.5, 0.0, 0.0], paths, 0.01, 0.5, seed);
    spec.snapshot_times = vec![0.1, 0.25];
    spec.eps = Some(s.eps);
    spec
}

#[test]
fn ensembles_do_not_depend_on_the_thread_count() {
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| simulate_ensemble(hardy_spec(200, 5)).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.terminal, b.terminal);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.min_radius, b.min_radius);
}

#[test]
fn constant_drift_shifts_mean_and_leaves_variance() {
    // X_T = x - b T + √2 W_T.
    let b = [1.0, -0.5, 0.0];
    let spec = EnsembleSpec::new(FieldSpec::constant(&b).unwrap(), DispersionSpec::identity(3), [0.0; 3], 20_000, 0.01, 1.0, 3);
    let ens = simulate_ensemble(spec).unwrap();
    for i in 0..3 {
        let v: Vec<f64> = ens.terminal.iter().map(|x| x[i]).collect();
        let (m, se) = mean_se(&v);
        assert!((m + b[i]).abs() < 4.0 * se, "coordinate {i}: mean {m} se {se}");
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
        // Var of the sample variance of a normal with variance 2 is 2·2²/(N-1).
        assert!((var - 2.0).abs() < 4.0 * (8.0 / v.len() as f64).sqrt(), "coordinate {i}: var {var}");
    }
}

#[test]
fn paths_freeze_after_leaving_the_box() {
    let mut spec = EnsembleSpec::new(FieldSpec::zero(3), DispersionSpec::identity(3), [0.0; 3], 500, 0.01, 1.0, 9);
    spec.exit_radius = 0.5;
    let ens = simulate_ensemble(spec).unwrap();
    assert!(ens.exit_fraction() > 0.5);
    for (x, e) in ens.terminal.iter().zip(&ens.exit_step) {
        let sup = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert_eq!(e.is_some(), sup > 0.5);
    }
}

#[test]
fn singular_drift_ensemble_passes_the_martingale_test() {
    let ens = simulate_ensemble(hardy_spec(4000, 21)).unwrap();
    let integrand = MartingaleIntegrand::of(&ens);
    for f in [Observable::Coordinate { i: 0 }, Observable::Product { i: 0, j: 1 }] {
        let r = martingale_report(&ens, &integrand, &f, &[0.1, 0.25, 0.5]).unwrap();
        assert!(r.pass, "{} max |z| {}", r.f_tag, r.z_max);
        assert_eq!(r.scheme, Scheme::Ito);
    }
}

#[test]
fn integrand_must_match_the_scheme() {
    let ito = simulate_ensemble(hardy_spec(50, 1)).unwrap();
    let mut spec = hardy_spec(50, 1);
    // Any correction field switches the scheme; the correction of the unmollified matrix is enough here.
    let base = DispersionSpec::radial_projection(3, 0.3).unwrap();
    spec.correction = Some(stratonovich_correction(&base, DerivativeMode::Analytic, None).unwrap());
    let strat = simulate_ensemble(spec).unwrap();
    assert_eq!(strat.summary().scheme, Scheme::StratonovichConverted);
    let f = Observable::Coordinate { i: 0 };
    assert!(martingale_report(&strat, &MartingaleIntegrand::of(&ito), &f, &[0.5]).is_err());
    assert!(martingale_report(&strat, &MartingaleIntegrand::of(&strat), &f, &[0.5]).is_ok());
}

#[test]
fn summary_statistics_on_known_samples() {
    let v: Vec<f64> = (1..=101).map(f64::from).collect();
    let (m, se) = mean_se(&v);
    assert_eq!(m, 51.0);
    // Sample variance of 1..=N is N(N+1)/12.
    assert!((se - (101.0 * 102.0 / 12.0 / 101.0f64).sqrt()).abs() < 1e-12);
    let (med, mse) = median_se(&v);
    assert_eq!(med, 51.0);
    assert!(mse > 0.0 && mse < 10.0);
}

proptest! {
    #[test]
    fn bump_derivatives_match_finite_differences(
        y in prop::array::uniform3(-1.0f64..1.0),
        c in prop::array::uniform3(-0.3f64..0.3),
        radius in 0.8f64..1.5,
    ) {
        let f = Observable::Bump { centre: c, radius };
        let (g, hs) = f.derivatives(&y);
        let h = 1e-5;
        for a in 0..3 {
            let shift = |s: f64| { let mut z = y; z[a] += s; z };
            let fd = (f.value(&shift(h)) - f.value(&shift(-h))) / (2.0 * h);
            prop_assert!((fd - g[a]).abs() < 1e-5, "grad {} {} {}", a, fd, g[a]);
            let (gp, _) = f.derivatives(&shift(h));
            let (gm, _) = f.derivatives(&shift(-h));
            for b in 0..3 {
                let fd2 = (gp[b] - gm[b]) / (2.0 * h);
                prop_assert!((fd2 - hs[b * 3 + a]).abs() < 1e-4, "hess {} {}", a, b);
            }
        }
    }
}
