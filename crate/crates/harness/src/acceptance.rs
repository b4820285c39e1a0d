//! The acceptance suite: eleven criteria, each a self-contained experiment
//! with its tolerance pinned as a constant.

use std::fmt;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use sdelab_core::admissibility::{q_grid, search_q};
use sdelab_core::coefficients::{estimate_form_bound, ClassKind, DispersionSpec, FieldSpec, MatrixTarget};
use sdelab_core::grid::{sup_norm, Grid};
use sdelab_core::regularization::{
    mollify_radial_dispersion, mollify_radial_field, verify_bound_preservation, EpsRule, MollificationSchedule,
};
use sdelab_core::sde::{
    hitting_statistics, martingale_reports, mc_vs_pde_crosscheck, moment_check, simulate_ensemble, EnsembleSpec,
    MartingaleIntegrand, Observable, PathEnsemble, PdeValue, Z_MAX,
};
use sdelab_core::semigroup::{
    apply_semigroup, assemble_operator, bump, check_weighted_estimates, estimate_star_exponents, fit_mu0,
    neumann_resolvent, perturbation_norm, resolvent_convergence, solve_resolvent, weight_derivative_check_grid,
    DiscreteOperator, SolverOptions, StarInput, WeightSpec,
};

use crate::bundle::StageStatus;
use crate::config::{
    BumpInput, EnsembleConfig, ExperimentConfig, GridConfig, RegularizationConfig, ResolventConfig, SdeVariant,
    StarConfig,
};
use crate::run::{run_experiment, CONTRACTION_TOL, NEUMANN_TOL, PERTURBATION_SLACK, POSITIVITY_FLOOR, PRESERVATION_MAX_RATIO};

pub const HARDY_DELTA_BAND: (f64, f64) = (0.2125, 0.2875);
pub const STAR_FIRST_BAND: (f64, f64) = (-0.65, -0.35);
pub const WEIGHTED_GROWTH: f64 = 2.0;
pub const NEUMANN_MAX_PERTURBATION: f64 = 0.6;
pub const DICHOTOMY_MIN_FACTOR: f64 = 2.0;
pub const STABILITY_SE: f64 = 4.0;
/// Exponent used for the gradient and weighted estimates.
pub const ESTIMATE_Q: f64 = 2.5;

#[derive(Clone, Debug)]
pub struct CriterionResult {
    pub id: u8,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.1} s)",
            self.id,
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u8, name: &'static str, limit: Option<Duration>, f: impl FnOnce() -> (bool, String)) -> CriterionResult {
    let t0 = Instant::now();
    let (mut pass, mut detail) = f();
    let el = t0.elapsed();
    if let Some(l) = limit {
        if el > l {
            pass = false;
            detail.push_str(&format!("; runtime {:.1} s exceeds {} s", el.as_secs_f64(), l.as_secs()));
        }
    }
    CriterionResult { id, name, pass, detail, seconds: el.as_secs_f64() }
}

fn failed(e: impl fmt::Display) -> (bool, String) {
    (false, format!("error: {e}"))
}

macro_rules! tryc {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return failed(e),
        }
    };
}

fn schedule(n: u32) -> MollificationSchedule {
    MollificationSchedule::new(n, &EpsRule::default()).expect("valid schedule")
}

fn radial_hardy(kappa: f64, n: u32) -> FieldSpec {
    mollify_radial_field(&FieldSpec::hardy(3, kappa, 1.0).expect("hardy"), &schedule(n)).expect("radial drift")
}

fn radial_projection(c: f64, n: u32, target: MatrixTarget) -> DispersionSpec {
    mollify_radial_dispersion(&DispersionSpec::radial_projection(3, c).expect("projection"), &schedule(n), target)
        .expect("radial dispersion")
}

/// The subcritical Itô Hardy configuration: `κ = 0.1`, `a = I + 0.1 x̂x̂ᵀ`.
pub const SUB_KAPPA: f64 = 0.1;
pub const SUB_C: f64 = 0.1;

fn estimate_grid() -> Grid {
    Grid::new(2.0, 48).expect("grid")
}

fn subcritical_operator(n: u32) -> DiscreteOperator {
    assemble_operator(&radial_projection(SUB_C, n, MatrixTarget::A), &radial_hardy(SUB_KAPPA, n), &estimate_grid())
        .expect("operator")
}

/// The `n = 8` operator shared by criteria 3 and 4.
fn main_operator() -> &'static DiscreteOperator {
    static OP: OnceLock<DiscreteOperator> = OnceLock::new();
    OP.get_or_init(|| subcritical_operator(8))
}

const RESOLVENT_MUS: [f64; 5] = [10.0, 30.0, 100.0, 300.0, 1000.0];

pub fn hardy_form_bound() -> CriterionResult {
    timed(1, "Hardy form-bound recovery", Some(Duration::from_secs(120)), || {
        let b = tryc!(FieldSpec::hardy(3, 0.25, 1.0));
        let est = tryc!(estimate_form_bound(&b, ClassKind::FDelta, 1.0, &Grid::new(2.0, 48).expect("grid")));
        let (lo, hi) = HARDY_DELTA_BAND;
        (est.delta >= lo && est.delta <= hi, format!("delta_est {:.4}, band [{lo}, {hi}]", est.delta))
    })
}

pub fn admissibility_reduction() -> CriterionResult {
    timed(2, "admissibility reduction to delta < 1", Some(Duration::from_secs(1)), || {
        let qs = q_grid(3, None, 6.0, 0.01);
        let mut mismatches = Vec::new();
        for delta in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.1, 1.2] {
            let r = tryc!(search_q(3, delta, 0.0, 0.0, 0.0, &qs));
            if r.feasible != (delta < 1.0) {
                mismatches.push(delta);
            }
        }
        (mismatches.is_empty(), format!("11 values of delta, mismatches {mismatches:?}"))
    })
}

pub fn resolvent_positivity() -> CriterionResult {
    timed(3, "resolvent positivity and contraction", None, || {
        let op = main_operator();
        let opts = SolverOptions::default();
        let fit = tryc!(fit_mu0(op, &RESOLVENT_MUS, &opts));
        let g = &op.grid;
        let inputs = [vec![1.0; g.len()], bump(g, [0.0; 3], 1.0), bump(g, [0.7, -0.3, 0.2], 0.6)];
        let (mut min_u, mut ratio) = (f64::INFINITY, 0.0f64);
        for f in &inputs {
            for &mu in &RESOLVENT_MUS {
                let s = tryc!(solve_resolvent(op, mu, f, &opts));
                min_u = s.u.iter().copied().fold(min_u, f64::min);
                ratio = ratio.max(sup_norm(&s.u) * (mu - fit.mu0) / sup_norm(f));
            }
        }
        (
            min_u >= POSITIVITY_FLOOR && ratio <= 1.0 + CONTRACTION_TOL,
            format!("mu0 {:.3e}, min u {min_u:.3e}, max contraction ratio {ratio:.8}", fit.mu0),
        )
    })
}

pub fn star_scaling() -> CriterionResult {
    timed(4, "gradient scaling exponents", Some(Duration::from_secs(600)), || {
        let op = main_operator();
        let opts = SolverOptions::default();
        let fit = tryc!(fit_mu0(op, &RESOLVENT_MUS, &opts));
        let mus = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
        let input = StarInput::RescaledBump { centre: [0.0; 3], radius: 1.2, mu_ref: 4.0 };
        let r = tryc!(estimate_star_exponents(op, &mus, &input, ESTIMATE_Q, fit.mu0, &opts));
        let e1 = r.first.fitted[0].value;
        let e2 = r.second.fitted[0].value;
        let target2 = 1.0 / ESTIMATE_Q - 0.5;
        let (lo, hi) = STAR_FIRST_BAND;
        let pass = e1 >= lo && e1 <= hi && (e2 - target2).abs() <= sdelab_core::semigroup::EXPONENT_TOL;
        (pass, format!("q {ESTIMATE_Q}: exponents {e1:.4} (band [{lo}, {hi}]) and {e2:.4} (target {target2:.4}), mu0 {:.2e}", r.mu0))
    })
}

pub fn weighted_estimates() -> CriterionResult {
    timed(5, "weighted estimates", None, || {
        let ns = [4u32, 8, 16];
        let ops: Vec<(u32, DiscreteOperator)> = ns.iter().map(|&n| (n, subcritical_operator(n))).collect();
        let refs: Vec<(u32, &DiscreteOperator)> = ops.iter().map(|(n, o)| (*n, o)).collect();
        let g = estimate_grid();
        let weight = WeightSpec { l: 0.01, nu: 2.0, q: ESTIMATE_Q };
        let check = weight_derivative_check_grid(&weight, &g);
        let h = bump(&g, [0.0; 3], 1.0);
        let b_m = radial_hardy(SUB_KAPPA, 16);
        let r = tryc!(check_weighted_estimates(&refs, &weight, &h, &b_m, &[10.0, 100.0], &SolverOptions::default()));
        let growth = |e: &sdelab_core::semigroup::EstimateReport| {
            let per_n = e.ratio.len() / ns.len();
            let first = e.ratio[..per_n].iter().copied().fold(0.0f64, f64::max);
            e.ratio.iter().copied().fold(0.0f64, f64::max) / first
        };
        let (g1, g2) = (growth(&r.e1), growth(&r.e2));
        let pass = check.grad_pass && check.laplacian_pass && g1 <= WEIGHTED_GROWTH && g2 <= WEIGHTED_GROWTH;
        (
            pass,
            format!(
                "E1 growth {g1:.4}, E2 growth {g2:.4}; weight ratios grad {:.12} laplacian {:.12}",
                check.max_grad_ratio, check.max_laplacian_ratio
            ),
        )
    })
}

pub fn neumann_identity() -> CriterionResult {
    timed(6, "Neumann-series resolvent identity", None, || {
        let g = estimate_grid();
        let a = radial_projection(0.3, 8, MatrixTarget::A);
        let b = radial_hardy(0.15, 8);
        let f = bump(&g, [0.0; 3], 1.0);
        let r = tryc!(neumann_resolvent(&a, &b, 1.0, &f, &g, 200, &SolverOptions::default()));
        let p = tryc!(perturbation_norm(&a, &b, 1.0, &g));
        let budget = r.a_dev + r.delta_est;
        let bound = budget + PERTURBATION_SLACK;
        let pass = budget <= NEUMANN_MAX_PERTURBATION && r.rel_sup_diff <= NEUMANN_TOL && p.norm <= bound;
        (
            pass,
            format!(
                "|a-I| {:.4} + delta {:.4}; {} terms, relative sup difference {:.2e}; perturbation norm {:.4} <= {bound:.4}",
                r.a_dev, r.delta_est, r.terms, r.rel_sup_diff, p.norm
            ),
        )
    })
}

fn martingale_observables() -> [Observable; 3] {
    [
        Observable::Coordinate { i: 0 },
        Observable::Product { i: 0, j: 1 },
        Observable::Bump { centre: [1.0, 0.0, 0.0], radius: 0.75 },
    ]
}

pub fn martingale_suite() -> CriterionResult {
    timed(7, "martingale suite", Some(Duration::from_secs(600)), || {
        let times = [0.25, 0.5, 1.0];
        let s8 = schedule(8);
        let mut spec = EnsembleSpec::new(
            radial_hardy(SUB_KAPPA, 8),
            radial_projection(SUB_C, 8, MatrixTarget::A),
            [1.0, 0.0, 0.0],
            100_000,
            1e-3,
            1.0,
            42,
        );
        spec.snapshot_times = times.to_vec();
        spec.exit_radius = 50.0;
        spec.eps = Some(s8.eps);
        let ens = tryc!(simulate_ensemble(spec));
        let reps = tryc!(martingale_reports(&ens, &MartingaleIntegrand::of(&ens), &martingale_observables(), &times));
        let worst = reps
            .iter()
            .flat_map(|r| r.z.iter().chain(r.conditional.iter().map(|c| &c.z)))
            .fold(0.0f64, |a, z| a.max(z.abs()));
        let mut control = EnsembleSpec::new(FieldSpec::zero(3), DispersionSpec::identity(3), [1.0, 0.0, 0.0], 100_000, 1e-3, 1.0, 43);
        control.snapshot_times = times.to_vec();
        let ce = tryc!(simulate_ensemble(control));
        let mut var_z = 0.0f64;
        let mut control_pass = true;
        for &t in &times {
            let m = tryc!(moment_check(&ce, t, 2.0 * t));
            control_pass &= m.pass;
            var_z = m.var_z.iter().fold(var_z, |a, z| a.max(z.abs()));
        }
        let pass = reps.iter().all(|r| r.pass) && worst <= Z_MAX && control_pass;
        (pass, format!("max |z| {worst:.3} over 3 observables and conditional tests; control variance max |z| {var_z:.3}"))
    })
}

pub fn mc_pde_crosscheck() -> CriterionResult {
    timed(8, "Monte Carlo against semigroup", None, || {
        let t = 0.5;
        let a = radial_projection(SUB_C, 8, MatrixTarget::A);
        let b = radial_hardy(SUB_KAPPA, 8);
        let f = Observable::Bump { centre: [1.0, 0.0, 0.0], radius: 0.75 };
        let mut pv = Vec::new();
        for (m, steps) in [(48usize, 25usize), (64, 50)] {
            let g = Grid::new(4.0, m).expect("grid");
            let op = tryc!(assemble_operator(&a, &b, &g));
            let u = tryc!(apply_semigroup(&op, t, &g.sample(|y| f.value(&y)), steps, &SolverOptions::default()));
            pv.push(PdeValue { grid: g, values: u, tau: t / steps as f64 });
        }
        let mut spec = EnsembleSpec::new(b, a, [1.0, 0.0, 0.0], 100_000, 1e-3, t, 43);
        spec.exit_radius = 50.0;
        spec.eps = Some(schedule(8).eps);
        let ens = tryc!(simulate_ensemble(spec));
        let pair: [PdeValue; 2] = pv.try_into().expect("two grids");
        let r = tryc!(mc_vs_pde_crosscheck(&ens, &f, t, &pair));
        (
            r.pass,
            format!(
                "MC {:.5} +- {:.5}, semigroup {:.5}, |diff| {:.5} <= 3 SE + allowance {:.5}",
                r.mc_mean,
                r.mc_se,
                r.semigroup_value,
                (r.mc_mean - r.semigroup_value).abs(),
                3.0 * r.mc_se + r.allowance
            ),
        )
    })
}

fn dichotomy_levels(kappa: f64, ns: &[u32]) -> sdelab_core::Result<Vec<(u32, f64, f64)>> {
    let mut ens: Vec<(u32, PathEnsemble)> = Vec::new();
    for &n in ns {
        let mut sp = EnsembleSpec::new(radial_hardy(kappa, n), DispersionSpec::identity(3), [1.0, 0.0, 0.0], 20_000, 5e-4, 1.0, 7);
        sp.exit_radius = 50.0;
        sp.eps = Some(schedule(n).eps);
        ens.push((n, simulate_ensemble(sp)?));
    }
    let refs: Vec<(u32, &PathEnsemble)> = ens.iter().map(|(n, e)| (*n, e)).collect();
    let t = hitting_statistics(&refs, &[0.1]);
    Ok(t.levels.iter().map(|l| (l.n, l.median_terminal_distance, l.median_se)).collect())
}

pub fn dichotomy_trend() -> CriterionResult {
    timed(9, "supercritical and subcritical trends", None, || {
        let ns = [4u32, 8, 16, 32];
        // δ = 49 and δ = 1/4 through κ = √δ (d-2)/2.
        let sup = tryc!(dichotomy_levels(3.5, &ns));
        let sub = tryc!(dichotomy_levels(0.25, &ns));
        let factor = sup[0].1 / sup[sup.len() - 1].1;
        let (_, m0, s0) = sub[0];
        let worst = sub.iter().map(|&(_, m, s)| (m - m0).abs() / (s * s + s0 * s0).sqrt().max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        let pass = factor >= DICHOTOMY_MIN_FACTOR && worst <= STABILITY_SE;
        let fmt = |v: &[(u32, f64, f64)]| v.iter().map(|(n, m, _)| format!("{n}:{m:.3}")).collect::<Vec<_>>().join(" ");
        (
            pass,
            format!(
                "supercritical medians {} (factor {factor:.2}); subcritical medians {} (max shift {worst:.2} SE)",
                fmt(&sup),
                fmt(&sub)
            ),
        )
    })
}

pub fn bound_preservation() -> CriterionResult {
    timed(10, "bound preservation and n-convergence", None, || {
        let base = tryc!(FieldSpec::hardy(3, 0.25, 1.0));
        let g = tryc!(Grid::new(2.0, 64));
        let t = tryc!(verify_bound_preservation(&base, &[4, 8, 16], &EpsRule::default(), 1.0, &g));
        let worst = t.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
        let g48 = estimate_grid();
        let ops: Vec<(u32, DiscreteOperator)> = [4u32, 8, 16, 32]
            .iter()
            .map(|&n| (n, assemble_operator(&DispersionSpec::identity(3), &radial_hardy(0.25, n), &g48).expect("operator")))
            .collect();
        let refs: Vec<(u32, &DiscreteOperator)> = ops.iter().map(|(n, o)| (*n, o)).collect();
        let c = tryc!(resolvent_convergence(&refs, &bump(&g48, [0.0; 3], 1.0), 10.0, ESTIMATE_Q, &SolverOptions::default()));
        let diffs: Vec<String> = c.rows.iter().map(|r| format!("{:.3e}", r.sup_diff)).collect();
        (
            worst <= PRESERVATION_MAX_RATIO && c.strictly_decreasing,
            format!("max delta ratio {worst:.4}; sup differences {}", diffs.join(" > ")),
        )
    })
}

/// A reduced subcritical Hardy config touching every stage.
pub fn determinism_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::minimal("determinism");
    cfg.drift = FieldSpec::hardy(3, SUB_KAPPA, 1.0).expect("hardy");
    cfg.dispersion = DispersionSpec::radial_projection(3, SUB_C).expect("projection");
    cfg.variant = SdeVariant::Ito;
    cfg.regularization = RegularizationConfig { n_list: vec![4, 8, 16], ..Default::default() };
    cfg.grid = GridConfig { extent: 2.0, nodes: 20 };
    cfg.resolvent = Some(ResolventConfig {
        mu_list: vec![10.0, 100.0],
        n: Some(4),
        q: Some(ESTIMATE_Q),
        input: BumpInput::default(),
        solver: SolverOptions::default(),
        star: Some(StarConfig { mu_list: vec![2.0, 4.0, 8.0, 16.0, 64.0], centre: [0.0; 3], radius: 1.2, mu_ref: 4.0 }),
        convergence: Some(crate::config::ConvergenceConfig { mu: 10.0 }),
        weighted: None,
        neumann: None,
        domain: None,
    });
    cfg.ensemble = Some(EnsembleConfig {
        paths: 2000,
        dt: 1e-2,
        horizon: 0.5,
        times: vec![0.25, 0.5],
        control: true,
        ..ExperimentConfig::minimal("").ensemble.expect("ensemble")
    });
    cfg.ensemble.as_mut().unwrap().x = [1.0, 0.0, 0.0];
    cfg.seed = 11;
    cfg
}

pub fn determinism() -> CriterionResult {
    timed(11, "determinism", None, || {
        let cfg = determinism_config();
        let a = tryc!(run_experiment(&cfg));
        let b = tryc!(run_experiment(&cfg));
        let ok_stages = a.stages.iter().filter(|s| s.status == StageStatus::Ok).count();
        let ja = crate::report::bundle_json(&a.without_timestamps());
        let jb = crate::report::bundle_json(&b.without_timestamps());
        (
            ja == jb && a.hash_matches() && ok_stages == a.stages.len(),
            format!("{} of {} stages ran, bundles {} modulo timestamps", ok_stages, a.stages.len(), if ja == jb { "equal" } else { "differ" }),
        )
    })
}

pub type Criterion = fn() -> CriterionResult;

pub const CRITERIA: [Criterion; 11] = [
    hardy_form_bound,
    admissibility_reduction,
    resolvent_positivity,
    star_scaling,
    weighted_estimates,
    neumann_identity,
    martingale_suite,
    mc_pde_crosscheck,
    dichotomy_trend,
    bound_preservation,
    determinism,
];

/// Runs the criteria with the given ids (all when empty), in order.
pub fn run_suite(ids: &[u8], mut on_result: impl FnMut(&CriterionResult)) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .enumerate()
        .filter(|(i, _)| ids.is_empty() || ids.contains(&(*i as u8 + 1)))
        .map(|(_, c)| {
            let r = c();
            on_result(&r);
            r
        })
        .collect()
}
