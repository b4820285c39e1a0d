use serde::{Deserialize, Serialize};

use super::ensemble::{PathEnsemble, PathVisitor, Scheme};
use super::observables::Observable;
use crate::coefficients::{DispersionSpec, FieldSpec};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Gate on every z statistic.
pub const Z_MAX: f64 = 4.0;

/// Mean and standard error.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn z_of(mean: f64, se: f64) -> f64 {
    if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        f64::INFINITY * mean.signum()
    }
}

/// Sample median and its standard error from the order statistics at
/// ranks `N/2 ± √N/2`.
pub fn median_se(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let med = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let half = 0.5 * (n as f64).sqrt();
    let lo = ((n as f64 / 2.0 - half).floor().max(0.0)) as usize;
    let hi = ((n as f64 / 2.0 + half).ceil() as usize).min(n - 1);
    (med, 0.5 * (s[hi] - s[lo]))
}

/// Coefficients of `-a:∇²f + (b - c)·∇f`, matching the simulated equation.
#[derive(Clone, Debug, PartialEq)]
pub struct MartingaleIntegrand {
    pub drift: FieldSpec,
    pub a: DispersionSpec,
    pub correction: Option<FieldSpec>,
    pub scheme: Scheme,
}

impl MartingaleIntegrand {
    /// The integrand of the ensemble's own coefficients.
    pub fn of(ens: &PathEnsemble) -> Self {
        Self {
            drift: ens.spec.drift.clone(),
            a: ens.spec.sigma.clone(),
            correction: ens.spec.correction.clone(),
            scheme: ens.spec.scheme(),
        }
    }

    fn eval(&self, fs: &[Observable], y: &[f64; 3], out: &mut [f64]) -> Result<()> {
        let mut a = [0.0; 9];
        let mut b = [0.0; 3];
        let mut c = [0.0; 3];
        self.a.a_into(y, &mut a)?;
        self.drift.eval_into(y, &mut b)?;
        if let Some(corr) = &self.correction {
            corr.eval_into(y, &mut c)?;
        }
        for (f, o) in fs.iter().zip(out.iter_mut()) {
            let (g, hs) = f.derivatives(y);
            let mut v = 0.0;
            for k in 0..9 {
                v -= a[k] * hs[k];
            }
            for i in 0..3 {
                v += (b[i] - c[i]) * g[i];
            }
            *o = v;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalZ {
    pub s: f64,
    pub t: f64,
    pub functional: String,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub f_tag: String,
    pub scheme: Scheme,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub conditional: Vec<ConditionalZ>,
    pub exit_fraction: f64,
    pub z_max: f64,
    pub pass: bool,
}

struct MartingaleVisitor<'a> {
    integrand: &'a MartingaleIntegrand,
    fs: &'a [Observable],
    steps: &'a [usize],
    dt: f64,
    x0: [f64; 3],
    prev: Vec<f64>,
    cur: Vec<f64>,
    integral: Vec<f64>,
    next: usize,
    /// `[f][time]`.
    m: Vec<Vec<f64>>,
    xs: Vec<[f64; 3]>,
    failed: bool,
}

impl PathVisitor for MartingaleVisitor<'_> {
    type Output = Option<(Vec<Vec<f64>>, Vec<[f64; 3]>)>;

    fn visit(&mut self, k: usize, x: &[f64; 3]) {
        if self.failed || self.next >= self.steps.len() {
            return;
        }
        if self.integrand.eval(self.fs, x, &mut self.cur).is_err() {
            self.failed = true;
            return;
        }
        if k > 0 {
            for (i, s) in self.integral.iter_mut().enumerate() {
                *s += 0.5 * self.dt * (self.prev[i] + self.cur[i]);
            }
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        while self.next < self.steps.len() && self.steps[self.next] == k {
            for (i, f) in self.fs.iter().enumerate() {
                self.m[i].push(f.value(x) - f.value(&self.x0) + self.integral[i]);
            }
            self.xs.push(*x);
            self.next += 1;
        }
    }

    fn finish(self) -> Self::Output {
        (!self.failed).then_some((self.m, self.xs))
    }
}

/// `M^f(t) = f(X_t) - f(x) + ∫_0^t (-a:∇²f + (b-c)·∇f)(X_s) ds` along replayed
/// paths, with trapezoidal time quadrature on the step lattice. Besides the
/// mean at each time, increments over consecutive times are correlated with
/// `sign(X_1(s) - x_1)` and `min(|X(s)|, 2)`.
pub fn martingale_reports(
    ens: &PathEnsemble,
    integrand: &MartingaleIntegrand,
    fs: &[Observable],
    times: &[f64],
) -> Result<Vec<MartingaleReport>> {
    let scheme = ens.spec.scheme();
    if integrand.scheme != scheme {
        return Err(Error::MismatchedVariant {
            integrand: integrand.scheme.variant().name().into(),
            ensemble: scheme.variant().name().into(),
        });
    }
    if (integrand.scheme == Scheme::StratonovichConverted) != integrand.correction.is_some() {
        return Err(Error::InvalidSpec("stratonovich integrands carry the correction drift, ito ones do not".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidSpec("martingale times must increase".into()));
    }
    let steps: Vec<usize> = times.iter().map(|t| ens.spec.step_of(*t)).collect::<Result<_>>()?;
    let x0 = ens.spec.x;
    let per_path = ens.replay(|| MartingaleVisitor {
        integrand,
        fs,
        steps: &steps,
        dt: ens.spec.dt,
        x0,
        prev: vec![0.0; fs.len()],
        cur: vec![0.0; fs.len()],
        integral: vec![0.0; fs.len()],
        next: 0,
        m: vec![Vec::with_capacity(steps.len()); fs.len()],
        xs: Vec::with_capacity(steps.len()),
        failed: false,
    })?;
    let per_path: Vec<(Vec<Vec<f64>>, Vec<[f64; 3]>)> = per_path
        .into_iter()
        .enumerate()
        .map(|(p, r)| r.ok_or(Error::NonFiniteState { path: p as u64, step: 0 }))
        .collect::<Result<_>>()?;

    let functionals: [(&str, Box<dyn Fn(&[f64; 3]) -> f64>); 2] = [
        ("sign_x1", Box::new(move |x: &[f64; 3]| (x[0] - x0[0]).signum())),
        ("clipped_radius", Box::new(|x: &[f64; 3]| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt().min(2.0))),
    ];
    let exit_fraction = ens.exit_fraction();
    let reports = fs
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let mut mean = Vec::new();
            let mut se = Vec::new();
            let mut z = Vec::new();
            for ti in 0..times.len() {
                let v: Vec<f64> = per_path.iter().map(|p| p.0[fi][ti]).collect();
                let (m, s) = mean_se(&v);
                mean.push(m);
                se.push(s);
                z.push(z_of(m, s));
            }
            let mut conditional = Vec::new();
            for ti in 1..times.len() {
                for (name, phi) in &functionals {
                    let ph: Vec<f64> = per_path.iter().map(|p| phi(&p.1[ti - 1])).collect();
                    let pm = ph.iter().sum::<f64>() / ph.len() as f64;
                    let prod: Vec<f64> =
                        per_path.iter().zip(&ph).map(|(p, v)| (p.0[fi][ti] - p.0[fi][ti - 1]) * (v - pm)).collect();
                    let (m, s) = mean_se(&prod);
                    conditional.push(ConditionalZ { s: times[ti - 1], t: times[ti], functional: (*name).into(), z: z_of(m, s) });
                }
            }
            let pass = z.iter().chain(conditional.iter().map(|c| &c.z)).all(|v| v.abs() <= Z_MAX);
            MartingaleReport {
                f_tag: f.tag(),
                scheme,
                times: times.to_vec(),
                mean,
                se,
                z,
                conditional,
                exit_fraction,
                z_max: Z_MAX,
                pass,
            }
        })
        .collect();
    Ok(reports)
}

pub fn martingale_report(
    ens: &PathEnsemble,
    integrand: &MartingaleIntegrand,
    f: &Observable,
    times: &[f64],
) -> Result<MartingaleReport> {
    Ok(martingale_reports(ens, integrand, std::slice::from_ref(f), times)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub t: f64,
    pub mean: [f64; 3],
    pub mean_z: [f64; 3],
    pub var: [f64; 3],
    pub var_z: [f64; 3],
    pub pass: bool,
}

/// Coordinate means against `x_i` and variances against `expected_var`.
pub fn moment_check(ens: &PathEnsemble, t: f64, expected_var: f64) -> Result<MomentCheck> {
    let states = ens.states_at(t)?;
    let n = states.len() as f64;
    let mut out = MomentCheck { t, mean: [0.0; 3], mean_z: [0.0; 3], var: [0.0; 3], var_z: [0.0; 3], pass: true };
    for i in 0..3 {
        let v: Vec<f64> = states.iter().map(|s| s[i]).collect();
        let (m, se) = mean_se(&v);
        let m2 = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let m4 = v.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
        let var = m2 * n / (n - 1.0);
        out.mean[i] = m;
        out.mean_z[i] = z_of(m - ens.spec.x[i], se);
        out.var[i] = var;
        out.var_z[i] = z_of(var - expected_var, ((m4 - m2 * m2) / n).sqrt());
    }
    out.pass = out.mean_z.iter().chain(&out.var_z).all(|z| z.abs() <= Z_MAX);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityRow {
    pub clip: f64,
    pub mean: f64,
    pub se: f64,
    /// Mean fraction of `[0, T]` during which `|b| > clip`.
    pub clip_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftIntegrability {
    pub horizon: f64,
    pub rows: Vec<IntegrabilityRow>,
    /// Relative change of the mean between the last two clip levels.
    pub last_relative_change: f64,
    pub saturated: bool,
}

struct ClipVisitor<'a> {
    b: &'a FieldSpec,
    clips: &'a [f64],
    dt: f64,
    prev: f64,
    sums: Vec<f64>,
    masses: Vec<f64>,
}

impl PathVisitor for ClipVisitor<'_> {
    type Output = (Vec<f64>, Vec<f64>);

    fn visit(&mut self, k: usize, x: &[f64; 3]) {
        let m = self.b.magnitude(x).unwrap_or(f64::INFINITY);
        if k > 0 {
            for (i, c) in self.clips.iter().enumerate() {
                self.sums[i] += 0.5 * self.dt * (self.prev.min(*c) + m.min(*c));
                if m > *c {
                    self.masses[i] += self.dt;
                }
            }
        }
        self.prev = m;
    }

    fn finish(self) -> Self::Output {
        (self.sums, self.masses)
    }
}

/// `E ∫_0^T min(|b(X_s)|, clip) ds` for each clip level; saturation means a
/// relative change below 5% between the last two levels.
pub fn drift_integrability(ens: &PathEnsemble, b_true: &FieldSpec, clips: &[f64]) -> Result<DriftIntegrability> {
    if clips.is_empty() {
        return Err(Error::InvalidSpec("no clip levels".into()));
    }
    let res = ens.replay(|| ClipVisitor {
        b: b_true,
        clips,
        dt: ens.spec.dt,
        prev: 0.0,
        sums: vec![0.0; clips.len()],
        masses: vec![0.0; clips.len()],
    })?;
    let t = ens.spec.horizon;
    let rows: Vec<IntegrabilityRow> = clips
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let v: Vec<f64> = res.iter().map(|r| r.0[i]).collect();
            let (mean, se) = mean_se(&v);
            let clip_mass = res.iter().map(|r| r.1[i]).sum::<f64>() / (res.len() as f64 * t);
            IntegrabilityRow { clip: *c, mean, se, clip_mass }
        })
        .collect();
    let last_relative_change = match rows.as_slice() {
        [.., a, b] if b.mean > 0.0 => (b.mean - a.mean).abs() / b.mean,
        _ => 0.0,
    };
    Ok(DriftIntegrability { horizon: t, saturated: last_relative_change < 0.05, last_relative_change, rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub n: u32,
    pub r_in: f64,
    pub inner_hit_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub n: u32,
    pub outer_exit_fraction: f64,
    pub median_terminal_distance: f64,
    pub median_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingTable {
    pub hits: Vec<HitRow>,
    pub levels: Vec<LevelRow>,
}

/// Inner-ball hits (on the step lattice), outer exits and the median terminal
/// distance to the origin for each regularization level.
pub fn hitting_statistics(ensembles: &[(u32, &PathEnsemble)], r_in: &[f64]) -> HittingTable {
    let mut hits = Vec::new();
    let mut levels = Vec::new();
    for &(n, e) in ensembles {
        let total = e.spec.paths as f64;
        for &r in r_in {
            let k = e.min_radius.iter().filter(|m| **m < r).count();
            hits.push(HitRow { n, r_in: r, inner_hit_fraction: k as f64 / total });
        }
        let d: Vec<f64> = e.terminal.iter().map(|x| (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()).collect();
        let (med, se) = median_se(&d);
        levels.push(LevelRow { n, outer_exit_fraction: e.exit_fraction(), median_terminal_distance: med, median_se: se });
    }
    HittingTable { hits, levels }
}

/// A semigroup grid function `e^{-tΛ_h} f` with its time step.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeValue {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub tau: f64,
}

impl PdeValue {
    fn error_scale(&self) -> f64 {
        self.tau + self.grid.spacing().powi(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosscheckReport {
    pub f_tag: String,
    pub t: f64,
    pub x: [f64; 3],
    pub mc_mean: f64,
    pub mc_se: f64,
    pub semigroup_value: f64,
    pub semigroup_coarse: f64,
    pub c_disc: f64,
    pub allowance: f64,
    pub pass: bool,
}

/// `|MC mean - e^{-tΛ_h}f(x)| ≤ 3 SE + c_disc (dt + τ + h²)`, with `c_disc`
/// fitted from the coarse/fine pair `pde = [coarse, fine]`.
pub fn mc_vs_pde_crosscheck(ens: &PathEnsemble, f: &Observable, t: f64, pde: &[PdeValue; 2]) -> Result<CrosscheckReport> {
    let x = ens.spec.x;
    let (centre, radius) = f.support().ok_or_else(|| Error::BoxMismatch("observable has unbounded support".into()))?;
    for p in pde {
        let l = p.grid.extent;
        if centre.iter().any(|c| c.abs() + radius > l) {
            return Err(Error::BoxMismatch(format!("support leaves [-{l}, {l}]^3")));
        }
        if p.values.len() != p.grid.len() {
            return Err(Error::GridMismatch);
        }
    }
    let (mc_mean, mc_se) = if t == 0.0 {
        (f.value(&x), 0.0)
    } else {
        mean_se(&ens.states_at(t)?.iter().map(|s| f.value(s)).collect::<Vec<_>>())
    };
    let value = |p: &PdeValue| p.grid.interpolate(&p.values, &x).map_err(|_| Error::BoxMismatch("start point outside the grid".into()));
    let coarse = value(&pde[0])?;
    let fine = value(&pde[1])?;
    let gap = (pde[0].error_scale() - pde[1].error_scale()).abs();
    let c_disc = if gap > 0.0 { (coarse - fine).abs() / gap } else { 0.0 };
    let allowance = (c_disc * (ens.spec.dt + pde[1].error_scale())).max(f64::EPSILON);
    let pass = (mc_mean - fine).abs() <= 3.0 * mc_se + allowance;
    Ok(CrosscheckReport {
        f_tag: f.tag(),
        t,
        x,
        mc_mean,
        mc_se,
        semigroup_value: fine,
        semigroup_coarse: coarse,
        c_disc,
        allowance,
        pass,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawRow {
    pub f_tag: String,
    pub t: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub se: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawReport {
    pub rows: Vec<LawRow>,
    pub pass: bool,
}

/// Two-sample z tests of `E f(X_t)` between ensembles built from two schedules.
pub fn law_consistency(a: &PathEnsemble, b: &PathEnsemble, fs: &[Observable], times: &[f64]) -> Result<LawReport> {
    if a.spec.x != b.spec.x {
        return Err(Error::InvalidSpec("ensembles start from different points".into()));
    }
    let mut rows = Vec::new();
    for &t in times {
        let (sa, sb) = (a.states_at(t)?, b.states_at(t)?);
        for f in fs {
            let (ma, ea) = mean_se(&sa.iter().map(|s| f.value(s)).collect::<Vec<_>>());
            let (mb, eb) = mean_se(&sb.iter().map(|s| f.value(s)).collect::<Vec<_>>());
            let se = ea.hypot(eb);
            rows.push(LawRow { f_tag: f.tag(), t, mean_a: ma, mean_b: mb, se, z: z_of(ma - mb, se) });
        }
    }
    let pass = rows.iter().all(|r| r.z.abs() <= Z_MAX);
    Ok(LawReport { rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_sample() {
        let (m, se) = median_se(&[3.0, 1.0, 2.0, 5.0, 4.0]);
        assert_eq!(m, 3.0);
        assert!(se > 0.0);
    }

    #[test]
    fn mean_se_of_constant() {
        assert_eq!(mean_se(&[2.0, 2.0, 2.0]), (2.0, 0.0));
        assert_eq!(z_of(0.0, 0.0), 0.0);
    }
}
