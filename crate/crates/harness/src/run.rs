//! The experiment pipeline. Stages run in a fixed order; the admissibility
//! check always precedes the semigroup and SDE stages, and a failing stage is
//! recorded without aborting the ones that do not depend on it.

use std::collections::BTreeMap;
use std::time::Instant;

use sdelab_core::admissibility::{
    analytic_dispersion_bounds, classify_hardy_regime, effective_delta, q_grid, search_q_variant, stratonovich_correction,
    Variant,
};
use sdelab_core::coefficients::{
    analytic_hardy_delta, estimate_form_bound, min_eigenvalue, ClassKind, DerivativeMode, DispersionKind,
    DispersionSpec, FieldKind, FieldSpec, MatrixTarget,
};
use sdelab_core::grid::{sup_norm, Grid};
use sdelab_core::regularization::{
    mollify_dispersion, mollify_field, mollify_radial_dispersion, mollify_radial_field, verify_bound_preservation,
    MollificationSchedule,
};
use sdelab_core::sde::{
    drift_integrability, hitting_statistics, martingale_reports, mc_vs_pde_crosscheck, moment_check,
    simulate_ensemble, EnsembleSpec, MartingaleIntegrand, PathEnsemble, PdeValue,
};
use sdelab_core::semigroup::{
    apply_semigroup, assemble_operator, bump, check_weighted_estimates, estimate_star_exponents, fit_mu0,
    neumann_resolvent, perturbation_norm, resolvent_convergence, solve_resolvent, weight_derivative_check_grid,
    DiscreteOperator, SolverOptions, StarInput, WeightSpec,
};

use crate::bundle::*;
use crate::config::{BoundMethod, BumpInput, ExperimentConfig, RealizationChoice, SdeVariant};
use crate::error::HarnessError;

/// Contraction slack of the positivity check.
pub const CONTRACTION_TOL: f64 = 1e-6;
/// Floor below which a resolvent value counts as negative.
pub const POSITIVITY_FLOOR: f64 = -1e-10;
/// Largest accepted `δ(b_n)/δ(b)`.
pub const PRESERVATION_MAX_RATIO: f64 = 1.1;
/// Largest accepted Neumann/direct relative sup difference.
pub const NEUMANN_TOL: f64 = 1e-6;
/// Slack of `‖PR‖ ≤ ‖a-I‖_∞ + δ_est`.
pub const PERTURBATION_SLACK: f64 = 0.05;

type StageResult<T> = std::result::Result<T, String>;

/// Coefficients at one regularization level.
#[derive(Clone, Debug)]
pub struct Regularized {
    pub n: u32,
    pub eps: f64,
    pub drift: FieldSpec,
    /// `a_n` for the Itô variant, `σ_n` for the Stratonovich one.
    pub dispersion: DispersionSpec,
    pub correction: Option<FieldSpec>,
    pub drift_realization: &'static str,
    pub dispersion_realization: &'static str,
}

impl Regularized {
    /// Drift of the PDE operator: `b_n`, or `b_n - c_n` in Stratonovich form.
    pub fn pde_drift(&self) -> FieldSpec {
        match &self.correction {
            None => self.drift.clone(),
            Some(c) => FieldSpec::sum(vec![self.drift.clone(), FieldSpec::scaled(-1.0, c.clone())]).expect("same dimension"),
        }
    }
}

fn radial_drift(b: &FieldSpec) -> bool {
    matches!(b.kind, FieldKind::Hardy { .. } | FieldKind::Zero) && b.d == 3
}

fn radial_dispersion(a: &DispersionSpec) -> bool {
    matches!(a.kind, DispersionKind::Identity | DispersionKind::RadialProjection { .. }) && a.d == 3
}

/// `b_n`, `a_n` (or `σ_n`) and the Stratonovich correction at level `n`.
pub fn regularize(cfg: &ExperimentConfig, grid: &Grid, n: u32) -> sdelab_core::Result<Regularized> {
    let s = MollificationSchedule::new(n, &cfg.regularization.eps_rule)?;
    let auto = cfg.regularization.realization == RealizationChoice::Auto;
    let target = match cfg.variant {
        SdeVariant::Ito => MatrixTarget::A,
        SdeVariant::Stratonovich => MatrixTarget::Sigma,
    };
    let (drift, dr) = if auto && radial_drift(&cfg.drift) {
        (mollify_radial_field(&cfg.drift, &s)?, "radial")
    } else {
        (mollify_field(&cfg.drift, &s, grid)?, "grid")
    };
    let (dispersion, ar) = if auto && radial_dispersion(&cfg.dispersion) {
        (mollify_radial_dispersion(&cfg.dispersion, &s, target)?, "radial")
    } else {
        (mollify_dispersion(&cfg.dispersion, &s, grid, target)?, "grid")
    };
    let correction = match cfg.variant {
        SdeVariant::Ito => None,
        SdeVariant::Stratonovich => Some(stratonovich_correction(&dispersion, DerivativeMode::FiniteDifference, Some(grid))?),
    };
    Ok(Regularized {
        n,
        eps: s.eps,
        drift,
        dispersion,
        correction,
        drift_realization: dr,
        dispersion_realization: ar,
    })
}

/// Which stages a run covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunPlan {
    pub last: Stage,
    pub resolvent: bool,
    pub simulate: bool,
}

impl RunPlan {
    /// Every stage the config has a section for.
    pub fn full() -> Self {
        Self { last: Stage::Simulate, resolvent: true, simulate: true }
    }

    /// The stages a CLI subcommand needs to reach `stage`.
    pub fn until(stage: Stage) -> Self {
        Self { last: stage, resolvent: stage == Stage::Resolvent, simulate: stage == Stage::Simulate }
    }
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    bundle: ReportBundle,
    grid: Option<Grid>,
    levels: BTreeMap<u32, Regularized>,
}

impl Runner<'_> {
    fn record<T>(&mut self, stage: Stage, f: impl FnOnce(&mut Self) -> StageResult<T>) -> Option<T> {
        let t0 = Instant::now();
        let out = f(self);
        let tag = match stage {
            Stage::Bounds | Stage::Admissibility => None,
            _ => self.bundle.cond0_tag.clone(),
        };
        let (status, error, value) = match out {
            Ok(v) => (StageStatus::Ok, None, Some(v)),
            Err(e) => (StageStatus::Failed, Some(e), None),
        };
        self.bundle.stages.push(StageRecord { stage, status, error, tag });
        self.bundle.timestamps.stage_seconds.insert(stage.name().into(), t0.elapsed().as_secs_f64());
        value
    }

    fn grid(&mut self) -> StageResult<Grid> {
        if self.grid.is_none() {
            self.grid = Some(Grid::new(self.cfg.grid.extent, self.cfg.grid.nodes).map_err(|e| e.to_string())?);
        }
        Ok(self.grid.clone().unwrap())
    }

    fn level(&mut self, n: u32) -> StageResult<Regularized> {
        if let Some(r) = self.levels.get(&n) {
            return Ok(r.clone());
        }
        let grid = self.grid()?;
        let r = regularize(self.cfg, &grid, n).map_err(|e| format!("regularization at n={n}: {e}"))?;
        self.levels.insert(n, r.clone());
        Ok(r)
    }

    fn default_n(&self) -> u32 {
        self.cfg.regularization.n_list[0]
    }

    fn verdict(&mut self, id: &str, pass: bool, detail: String) {
        self.bundle.acceptance.push(Verdict { id: id.into(), pass, detail });
    }

    fn bounds(&mut self) -> StageResult<BoundsReport> {
        let cfg = self.cfg;
        let lambda = cfg.bounds.lambda;
        let drift = match (cfg.bounds.drift_delta, &cfg.drift.kind, cfg.bounds.method) {
            (Some(delta), _, _) => sdelab_core::coefficients::FormBoundEstimate {
                delta,
                lambda,
                class_kind: ClassKind::FDelta,
                method: sdelab_core::coefficients::Method::ClosedBound,
                grid_meta: None,
                residual: 0.0,
            },
            (None, FieldKind::Hardy { kappa, .. }, BoundMethod::Auto) => {
                analytic_hardy_delta(*kappa, cfg.drift.d, lambda).map_err(|e| e.to_string())?
            }
            _ => {
                let grid = self.grid()?;
                estimate_form_bound(&cfg.drift, ClassKind::FDelta, lambda, &grid).map_err(|e| e.to_string())?
            }
        };
        let regime = match &cfg.drift.kind {
            FieldKind::Hardy { .. } => Some(classify_hardy_regime(drift.delta, cfg.drift.d).map_err(|e| e.to_string())?),
            _ => None,
        };
        let dispersion = match (&cfg.bounds.dispersion, analytic_dispersion_bounds(&cfg.dispersion)) {
            (Some(b), _) => DispersionBoundsUsed {
                source: "config".into(),
                delta_a: b.delta_a,
                gamma: b.gamma,
                a_dev: b.a_dev,
                delta_c: b.delta_c,
            },
            (None, Some(b)) => DispersionBoundsUsed {
                source: "analytic".into(),
                delta_a: b.delta_a,
                gamma: b.gamma,
                a_dev: b.a_dev,
                delta_c: Some(b.delta_c),
            },
            (None, None) => return Err("dispersion has no bounds".into()),
        };
        Ok(BoundsReport { drift, regime, dispersion })
    }

    fn admissibility(&mut self) -> StageResult<sdelab_core::admissibility::AdmissibilityReport> {
        let b = self.bundle.bounds.clone().ok_or("bounds stage did not produce a report")?;
        let variant = match self.cfg.variant {
            SdeVariant::Ito => Variant::Ito,
            SdeVariant::Stratonovich => Variant::Stratonovich,
        };
        let d = &b.dispersion;
        let dh = effective_delta(variant, b.drift.delta, d.delta_a, d.delta_c).map_err(|e| e.to_string())?;
        let qs = q_grid(3, None, self.cfg.bounds.q_max, self.cfg.bounds.q_step);
        search_q_variant(3, variant, dh, d.gamma, d.delta_a, d.a_dev, &qs).map_err(|e| e.to_string())
    }

    fn regularization(&mut self) -> StageResult<RegularizationReport> {
        let grid = self.grid()?;
        let mut rows = Vec::new();
        for &n in &self.cfg.regularization.n_list.clone() {
            let r = self.level(n)?;
            let mags = r.drift.magnitude_on(&grid).map_err(|e| e.to_string())?;
            let (mut min_eig, mut dev) = (f64::INFINITY, 0.0f64);
            let mut a = [0.0; 9];
            for x in grid.nodes_iter() {
                r.dispersion.a_into(&x, &mut a).map_err(|e| e.to_string())?;
                let lo = min_eigenvalue(&a, 3);
                min_eig = min_eig.min(lo);
                for i in 0..3 {
                    a[i * 3 + i] -= 1.0;
                }
                let hi = -min_eigenvalue(&a.map(|v| -v), 3);
                dev = dev.max((lo - 1.0).abs()).max(hi.abs());
            }
            rows.push(RegularizationRow {
                n,
                eps: r.eps,
                drift_realization: r.drift_realization.into(),
                dispersion_realization: r.dispersion_realization.into(),
                drift_sup: sup_norm(&mags),
                a_min_eig: min_eig,
                a_dev: dev,
            });
        }
        let preservation = if self.cfg.regularization.preservation {
            Some(
                verify_bound_preservation(
                    &self.cfg.drift,
                    &self.cfg.regularization.n_list,
                    &self.cfg.regularization.eps_rule,
                    self.cfg.bounds.lambda,
                    &grid,
                )
                .map_err(|e| e.to_string())?,
            )
        } else {
            None
        };
        Ok(RegularizationReport { rows, preservation })
    }

    fn operator(&mut self, n: u32) -> StageResult<DiscreteOperator> {
        let r = self.level(n)?;
        let grid = self.grid()?;
        assemble_operator(&r.dispersion, &r.pde_drift(), &grid).map_err(|e| format!("operator at n={n}: {e}"))
    }

    fn resolvent(&mut self) -> StageResult<ResolventReport> {
        let rc = self.cfg.resolvent.clone().ok_or("no resolvent section")?;
        let n = rc.n.unwrap_or(self.default_n());
        let q = rc.q.or_else(|| self.bundle.admissibility.as_ref().map(|a| a.q_star.unwrap_or(a.q))).unwrap_or(2.5);
        let op = self.operator(n)?;
        let grid = op.grid.clone();
        let mu0 = fit_mu0(&op, &rc.mu_list, &rc.solver).map_err(|e| e.to_string())?;
        let f = bump(&grid, rc.input.centre, rc.input.radius);
        let sup_f = sup_norm(&f);
        let mut positivity = Vec::new();
        for &mu in &rc.mu_list {
            if mu <= mu0.mu0 {
                continue;
            }
            let s = solve_resolvent(&op, mu, &f, &rc.solver).map_err(|e| e.to_string())?;
            let sup_u = sup_norm(&s.u);
            positivity.push(PositivityRow {
                mu,
                min_u: s.u.iter().copied().fold(f64::INFINITY, f64::min),
                sup_u,
                sup_f,
                contraction_ratio: if sup_f > 0.0 { sup_u * (mu - mu0.mu0) / sup_f } else { 0.0 },
                residual: s.residual,
                iterations: s.iterations,
            });
        }
        let star = match &rc.star {
            Some(sc) => Some(
                estimate_star_exponents(
                    &op,
                    &sc.mu_list,
                    &StarInput::RescaledBump { centre: sc.centre, radius: sc.radius, mu_ref: sc.mu_ref },
                    q,
                    mu0.mu0,
                    &rc.solver,
                )
                .map_err(|e| format!("star: {e}"))?,
            ),
            None => None,
        };
        let n_list = self.cfg.regularization.n_list.clone();
        let family = if rc.convergence.is_some() || rc.weighted.is_some() {
            let mut ops = Vec::new();
            for &m in &n_list {
                ops.push((m, if m == n { op.clone() } else { self.operator(m)? }));
            }
            ops
        } else {
            vec![]
        };
        let refs: Vec<(u32, &DiscreteOperator)> = family.iter().map(|(m, o)| (*m, o)).collect();
        let convergence = match &rc.convergence {
            Some(cc) => Some(resolvent_convergence(&refs, &f, cc.mu, q, &rc.solver).map_err(|e| format!("convergence: {e}"))?),
            None => None,
        };
        let weighted = match &rc.weighted {
            Some(wc) => {
                let weight = WeightSpec { l: wc.l, nu: wc.nu, q };
                let b_m = self.level(wc.m)?.drift;
                let estimates = check_weighted_estimates(&refs, &weight, &f, &b_m, &wc.mu_list, &rc.solver)
                    .map_err(|e| format!("weighted: {e}"))?;
                Some(WeightedSection { weight_check: weight_derivative_check_grid(&weight, &grid), estimates })
            }
            None => None,
        };
        let neumann = match &rc.neumann {
            Some(nc) => {
                let r = self.level(n)?;
                if r.correction.is_some() {
                    return Err("the Neumann check covers the Itô operator only".into());
                }
                let res = neumann_resolvent(&r.dispersion, &r.drift, nc.mu, &f, &grid, nc.max_terms, &rc.solver)
                    .map_err(|e| format!("neumann: {e}"))?;
                let p = perturbation_norm(&r.dispersion, &r.drift, nc.mu, &grid).map_err(|e| e.to_string())?;
                Some(NeumannSection {
                    mu: nc.mu,
                    terms: res.terms,
                    term_norms: res.term_norms,
                    a_dev: res.a_dev,
                    delta_est: res.delta_est,
                    rel_sup_diff: res.rel_sup_diff,
                    perturbation_norm: p.norm,
                })
            }
            None => None,
        };
        let domain = match &rc.domain {
            Some(dc) => Some(self.domain_audit(n, &op, dc.mu, dc.factor, &rc.input, &rc.solver)?),
            None => None,
        };
        Ok(ResolventReport { n, q, audit: op.audit.clone(), mu0, positivity, star, convergence, weighted, neumann, domain })
    }

    /// The same solve on a wider box whose nodes contain the original ones.
    fn domain_audit(
        &mut self,
        n: u32,
        op: &DiscreteOperator,
        mu: f64,
        factor: f64,
        input: &BumpInput,
        opts: &SolverOptions,
    ) -> StageResult<DomainAudit> {
        let grid = &op.grid;
        let pad = ((grid.nodes as f64 * (factor - 1.0) / 2.0).round() as usize).max(1);
        let wide = Grid::new(grid.extent + pad as f64 * grid.spacing(), grid.nodes + 2 * pad).map_err(|e| e.to_string())?;
        let r = regularize(self.cfg, &wide, n).map_err(|e| format!("domain audit: {e}"))?;
        let wide_op = assemble_operator(&r.dispersion, &r.pde_drift(), &wide).map_err(|e| format!("domain audit: {e}"))?;
        let u = solve_resolvent(op, mu, &bump(grid, input.centre, input.radius), opts).map_err(|e| e.to_string())?.u;
        let uw = solve_resolvent(&wide_op, mu, &bump(&wide, input.centre, input.radius), opts).map_err(|e| e.to_string())?.u;
        let mut diff = 0.0f64;
        for (idx, v) in u.iter().enumerate() {
            let [i, j, k] = grid.unravel(idx);
            diff = diff.max((v - uw[wide.index(i + pad, j + pad, k + pad)]).abs());
        }
        let sup = sup_norm(&u);
        Ok(DomainAudit {
            mu,
            extent: grid.extent,
            extent_wide: wide.extent,
            nodes_wide: wide.nodes,
            rel_sup_diff: if sup > 0.0 { diff / sup } else { 0.0 },
        })
    }

    fn ensemble_spec(&self, r: &Regularized, paths: usize, seed: u64) -> EnsembleSpec {
        let ec = self.cfg.ensemble.as_ref().expect("ensemble section");
        let mut spec = EnsembleSpec::new(r.drift.clone(), r.dispersion.clone(), ec.x, paths, ec.dt, ec.horizon, seed);
        spec.correction = r.correction.clone();
        spec.exit_radius = ec.exit_radius;
        spec.eps = Some(r.eps);
        spec.schedule_n = Some(r.n);
        spec
    }

    fn simulate(&mut self) -> StageResult<SimulationReport> {
        let ec = self.cfg.ensemble.clone().ok_or("no ensemble section")?;
        let n = ec.schedule_n.unwrap_or(self.default_n());
        let r = self.level(n)?;
        let times = if ec.times.is_empty() { vec![ec.horizon] } else { ec.times.clone() };
        let mut spec = self.ensemble_spec(&r, ec.paths, self.cfg.seed);
        spec.snapshot_times = times.clone();
        if let Some(c) = &ec.crosscheck {
            spec.snapshot_times.push(c.t);
        }
        spec.snapshot_times.sort_by(f64::total_cmp);
        spec.snapshot_times.dedup();
        let ens = simulate_ensemble(spec).map_err(|e| e.to_string())?;
        let martingale = martingale_reports(&ens, &MartingaleIntegrand::of(&ens), &ec.observables, &times)
            .map_err(|e| format!("martingale: {e}"))?;
        let control = if ec.control {
            let mut cs = EnsembleSpec::new(
                FieldSpec::zero(3),
                DispersionSpec::identity(3),
                ec.x,
                ec.paths,
                ec.dt,
                ec.horizon,
                self.cfg.seed.wrapping_add(1),
            );
            cs.snapshot_times = times.clone();
            cs.exit_radius = ec.exit_radius;
            let ce = simulate_ensemble(cs).map_err(|e| e.to_string())?;
            Some(times.iter().map(|&t| moment_check(&ce, t, 2.0 * t)).collect::<sdelab_core::Result<Vec<_>>>().map_err(|e| e.to_string())?)
        } else {
            None
        };
        let integrability = if ec.integrability_clips.is_empty() {
            None
        } else {
            Some(drift_integrability(&ens, &self.cfg.drift, &ec.integrability_clips).map_err(|e| e.to_string())?)
        };
        let hitting = match &ec.hitting {
            Some(hc) => {
                let mut ens_n: Vec<(u32, PathEnsemble)> = Vec::new();
                for &m in &hc.n_list {
                    let rm = self.level(m)?;
                    let spec = self.ensemble_spec(&rm, ec.paths, self.cfg.seed.wrapping_add(2));
                    ens_n.push((m, simulate_ensemble(spec).map_err(|e| format!("hitting at n={m}: {e}"))?));
                }
                let refs: Vec<(u32, &PathEnsemble)> = ens_n.iter().map(|(m, e)| (*m, e)).collect();
                Some(hitting_statistics(&refs, &hc.r_in))
            }
            None => None,
        };
        let crosscheck = match &ec.crosscheck {
            Some(c) => {
                let a = match self.cfg.variant {
                    SdeVariant::Ito => r.dispersion.clone(),
                    SdeVariant::Stratonovich => return Err("the cross-check covers the Itô variant only".into()),
                };
                let mut pv = Vec::new();
                for g in [&c.coarse, &c.fine] {
                    let grid = Grid::new(g.extent, g.nodes).map_err(|e| e.to_string())?;
                    let op = assemble_operator(&a, &r.drift, &grid).map_err(|e| e.to_string())?;
                    let f = grid.sample(|y| c.observable.value(&y));
                    let u = apply_semigroup(&op, c.t, &f, g.steps, &SolverOptions::default()).map_err(|e| e.to_string())?;
                    pv.push(PdeValue { grid, values: u, tau: c.t / g.steps as f64 });
                }
                let pair: [PdeValue; 2] = pv.try_into().expect("two grids");
                Some(mc_vs_pde_crosscheck(&ens, &c.observable, c.t, &pair).map_err(|e| format!("crosscheck: {e}"))?)
            }
            None => None,
        };
        Ok(SimulationReport {
            n,
            scheme: ens.spec.scheme(),
            summary: ens.summary(),
            martingale,
            control,
            integrability,
            hitting,
            crosscheck,
        })
    }

    fn collect_verdicts(&mut self) {
        if let Some(r) = self.bundle.regularization.clone() {
            let worst = r.rows.iter().map(|x| x.a_min_eig).fold(f64::INFINITY, f64::min);
            self.verdict("regularization.a_n_at_least_identity", worst >= 1.0 - 1e-10, format!("min eigenvalue {worst}"));
            if let Some(p) = &r.preservation {
                let worst = p.rows.iter().map(|x| x.ratio).fold(0.0, f64::max);
                self.verdict(
                    "regularization.bound_preservation",
                    worst <= PRESERVATION_MAX_RATIO,
                    format!("max ratio {worst:.4}"),
                );
            }
        }
        if let Some(r) = self.bundle.resolvent.clone() {
            let min_u = r.positivity.iter().map(|p| p.min_u).fold(f64::INFINITY, f64::min);
            let ratio = r.positivity.iter().map(|p| p.contraction_ratio).fold(0.0, f64::max);
            self.verdict("resolvent.positivity", min_u >= POSITIVITY_FLOOR, format!("min u {min_u:e}"));
            self.verdict("resolvent.contraction", ratio <= 1.0 + CONTRACTION_TOL, format!("max ratio {ratio}"));
            if let Some(s) = &r.star {
                let detail = |e: &sdelab_core::semigroup::EstimateReport| {
                    e.fitted.iter().map(|f| format!("{}={:.4}", f.name, f.value)).collect::<Vec<_>>().join(" ")
                };
                self.verdict("resolvent.star.gradient_q", s.first.pass, detail(&s.first));
                self.verdict("resolvent.star.gradient_qj", s.second.pass, detail(&s.second));
            }
            if let Some(c) = &r.convergence {
                let diffs: Vec<String> = c.rows.iter().map(|x| format!("{:.3e}", x.sup_diff)).collect();
                self.verdict("resolvent.n_convergence", c.strictly_decreasing, diffs.join(" > "));
            }
            if let Some(w) = &r.weighted {
                let wc = &w.weight_check;
                self.verdict("resolvent.weight_inequalities", wc.grad_pass && wc.laplacian_pass, format!(
                    "grad {:.6} laplacian {:.6}",
                    wc.max_grad_ratio, wc.max_laplacian_ratio
                ));
                self.verdict("resolvent.weighted_e1", w.estimates.e1.pass, format!("ratios {:?}", w.estimates.e1.ratio));
                self.verdict("resolvent.weighted_e2", w.estimates.e2.pass, format!("ratios {:?}", w.estimates.e2.ratio));
            }
            if let Some(nm) = &r.neumann {
                self.verdict(
                    "resolvent.neumann_identity",
                    nm.rel_sup_diff <= NEUMANN_TOL,
                    format!("{} terms, relative sup difference {:e}", nm.terms, nm.rel_sup_diff),
                );
                let bound = nm.a_dev + nm.delta_est + PERTURBATION_SLACK;
                self.verdict(
                    "resolvent.perturbation_norm",
                    nm.perturbation_norm <= bound,
                    format!("{:.4} <= {:.4}", nm.perturbation_norm, bound),
                );
            }
        }
        if let Some(s) = self.bundle.simulation.clone() {
            for m in &s.martingale {
                let worst = m.z.iter().chain(m.conditional.iter().map(|c| &c.z)).fold(0.0f64, |a, z| a.max(z.abs()));
                self.verdict(&format!("simulate.martingale.{}", m.f_tag), m.pass, format!("max |z| {worst:.3}"));
            }
            if let Some(c) = &s.control {
                let worst = c.iter().flat_map(|m| m.var_z).fold(0.0f64, |a, z| a.max(z.abs()));
                self.verdict("simulate.control_variance", c.iter().all(|m| m.pass), format!("max |z| {worst:.3}"));
            }
            if let Some(c) = &s.crosscheck {
                self.verdict("simulate.crosscheck", c.pass, format!(
                    "mc {:.5} +- {:.5}, semigroup {:.5}, allowance {:.5}",
                    c.mc_mean, c.mc_se, c.semigroup_value, c.allowance
                ));
            }
            if let Some(i) = &s.integrability {
                self.verdict("simulate.drift_integrability", i.saturated, format!(
                    "last relative change {:.4}",
                    i.last_relative_change
                ));
            }
        }
    }
}

/// Runs the stages of `plan` that the config has sections for.
pub fn run_stages(cfg: &ExperimentConfig, plan: RunPlan) -> ReportBundle {
    let echo = cfg.to_json();
    let mut runner = Runner { cfg, bundle: ReportBundle::empty(&cfg.id, echo), grid: None, levels: BTreeMap::new() };
    runner.bundle.timestamps.started = chrono::Utc::now().to_rfc3339();
    runner.bundle.bounds = runner.record(Stage::Bounds, |r| r.bounds());
    if plan.last >= Stage::Admissibility {
        runner.bundle.admissibility = runner.record(Stage::Admissibility, |r| r.admissibility());
        let feasible = runner.bundle.admissibility.as_ref().map(|a| a.feasible).unwrap_or(false);
        if !feasible {
            runner.bundle.cond0_tag = Some(OUTSIDE_COND0.into());
        }
    }
    if plan.last >= Stage::Regularization {
        runner.bundle.regularization = runner.record(Stage::Regularization, |r| r.regularization());
    }
    if plan.resolvent && cfg.resolvent.is_some() {
        runner.bundle.resolvent = runner.record(Stage::Resolvent, |r| r.resolvent());
    }
    if plan.simulate && cfg.ensemble.is_some() {
        runner.bundle.simulation = runner.record(Stage::Simulate, |r| r.simulate());
    }
    runner.collect_verdicts();
    runner.bundle.timestamps.finished = chrono::Utc::now().to_rfc3339();
    runner.bundle
}

/// Every stage the config has a section for. Stage failures are recorded in
/// the bundle; [`check_stages`] turns them into an error.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ReportBundle, HarnessError> {
    cfg.validate_schema()?;
    Ok(run_stages(cfg, RunPlan::full()))
}

/// The first failed stage as a [`HarnessError::StageFailed`].
pub fn check_stages(bundle: &ReportBundle) -> Result<(), HarnessError> {
    match bundle.failed_stages().first() {
        Some(s) => Err(HarnessError::StageFailed {
            stage: s.stage.name().into(),
            message: s.error.clone().unwrap_or_default(),
        }),
        None => Ok(()),
    }
}
