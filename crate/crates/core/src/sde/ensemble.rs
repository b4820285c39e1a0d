use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::admissibility::Variant;
use crate::coefficients::{DispersionSpec, FieldSpec};
use crate::error::{Error, Result};

/// Largest admissible time step regardless of the heat time.
pub const MAX_DT: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Ito,
    /// Itô form of the Stratonovich equation, with the correction drift `+c`.
    StratonovichConverted,
}

impl Scheme {
    pub fn variant(self) -> Variant {
        match self {
            Scheme::Ito => Variant::Ito,
            Scheme::StratonovichConverted => Variant::Stratonovich,
        }
    }
}

/// Everything that determines an ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub drift: FieldSpec,
    pub sigma: DispersionSpec,
    pub correction: Option<FieldSpec>,
    pub x: [f64; 3],
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Paths freeze once `|X|_∞ > exit_radius`.
    pub exit_radius: f64,
    /// Times at which all states are kept (the horizon is always kept).
    pub snapshot_times: Vec<f64>,
    /// Heat time of the coefficients; `dt` must not exceed it.
    pub eps: Option<f64>,
    pub schedule_n: Option<u32>,
    pub record_full: bool,
}

impl EnsembleSpec {
    pub fn new(drift: FieldSpec, sigma: DispersionSpec, x: [f64; 3], paths: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        Self {
            drift,
            sigma,
            correction: None,
            x,
            paths,
            dt,
            horizon,
            seed,
            exit_radius: 1e6,
            snapshot_times: vec![],
            eps: None,
            schedule_n: None,
            record_full: false,
        }
    }

    pub fn scheme(&self) -> Scheme {
        if self.correction.is_some() {
            Scheme::StratonovichConverted
        } else {
            Scheme::Ito
        }
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Step index of time `t`, which must lie on the step lattice.
    pub fn step_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if (k * self.dt - t).abs() > 1e-9 * t.max(1.0) || k < 0.0 || k as usize > self.steps() {
            return Err(Error::InvalidSpec(format!("time {t} is not a step time in [0, {}]", self.horizon)));
        }
        Ok(k as usize)
    }

    fn validate(&self) -> Result<()> {
        let max = self.eps.map_or(MAX_DT, |e| e.min(MAX_DT));
        if !(self.dt > 0.0) || self.dt > max * (1.0 + 1e-12) {
            return Err(Error::BadStep { dt: self.dt, max });
        }
        if !(self.horizon > 0.0) || self.paths == 0 {
            return Err(Error::InvalidSpec("ensemble needs a positive horizon and at least one path".into()));
        }
        if (self.steps() as f64 * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::InvalidSpec("horizon must be a multiple of dt".into()));
        }
        for t in &self.snapshot_times {
            self.step_of(*t)?;
        }
        if self.drift.d != 3 || self.sigma.d != 3 {
            return Err(Error::InvalidDimension(self.drift.d.max(self.sigma.d)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub step: usize,
    pub states: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathEnsemble {
    pub spec: EnsembleSpec,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    /// Step after which each path stopped moving, if it left the box.
    pub exit_step: Vec<Option<usize>>,
    /// Smallest `|X_k|` seen along each path.
    pub min_radius: Vec<f64>,
    pub terminal: Vec<[f64; 3]>,
    /// Largest single-step displacement over the ensemble.
    pub max_increment: f64,
    pub full: Option<Vec<Vec<[f64; 3]>>>,
}

/// Serializable summary of an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub x: [f64; 3],
    pub scheme: Scheme,
    pub schedule_n: Option<u32>,
    pub exit_radius: f64,
    pub exit_fraction: f64,
    pub max_increment: f64,
}

fn norm3(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

/// Runs one path, calling `visit(k, X_k)` for `k = 0..=steps`; frozen paths
/// repeat their exit state. Returns the exit step.
pub(crate) fn run_path(spec: &EnsembleSpec, path: u64, mut visit: impl FnMut(usize, &[f64; 3])) -> Result<Option<usize>> {
    let steps = spec.steps();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(path);
    let sdt = (2.0 * spec.dt).sqrt();
    let mut x = spec.x;
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    let mut s = [0.0; 9];
    let mut exit = None;
    let fail = |k: usize| Error::NonFiniteState { path, step: k };
    visit(0, &x);
    for k in 1..=steps {
        if exit.is_none() {
            let xi: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
            spec.drift.eval_into(&x, &mut b).map_err(|_| fail(k))?;
            spec.sigma.sigma_into(&x, &mut s).map_err(|_| fail(k))?;
            if let Some(corr) = &spec.correction {
                corr.eval_into(&x, &mut c).map_err(|_| fail(k))?;
            }
            for i in 0..3 {
                let noise = s[i * 3] * xi[0] + s[i * 3 + 1] * xi[1] + s[i * 3 + 2] * xi[2];
                x[i] += (c[i] - b[i]) * spec.dt + sdt * noise;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(fail(k));
            }
            if x.iter().any(|v| v.abs() > spec.exit_radius) {
                exit = Some(k);
            }
        }
        visit(k, &x);
    }
    Ok(exit)
}

struct PathRecord {
    snaps: Vec<[f64; 3]>,
    exit: Option<usize>,
    min_r: f64,
    terminal: [f64; 3],
    max_inc: f64,
    full: Option<Vec<[f64; 3]>>,
}

/// Euler–Maruyama ensemble `X_{k+1} = X_k - b dt + c dt + √2 σ √dt ξ_k`, one
/// ChaCha8 stream per path keyed by `(seed, path index)`.
pub fn simulate_ensemble(spec: EnsembleSpec) -> Result<PathEnsemble> {
    spec.validate()?;
    let steps = spec.steps();
    let mut snap_steps: Vec<(f64, usize)> = spec.snapshot_times.iter().map(|t| Ok((*t, spec.step_of(*t)?))).collect::<Result<_>>()?;
    snap_steps.sort_by(|a, b| a.1.cmp(&b.1));
    snap_steps.dedup_by_key(|s| s.1);
    let records: Vec<PathRecord> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rec = PathRecord {
                snaps: Vec::with_capacity(snap_steps.len()),
                exit: None,
                min_r: f64::INFINITY,
                terminal: spec.x,
                max_inc: 0.0,
                full: spec.record_full.then(|| Vec::with_capacity(steps + 1)),
            };
            let mut prev = spec.x;
            let mut next_snap = 0;
            rec.exit = run_path(&spec, p, |k, x| {
                rec.min_r = rec.min_r.min(norm3(x));
                let inc = norm3(&[x[0] - prev[0], x[1] - prev[1], x[2] - prev[2]]);
                rec.max_inc = rec.max_inc.max(inc);
                prev = *x;
                while next_snap < snap_steps.len() && snap_steps[next_snap].1 == k {
                    rec.snaps.push(*x);
                    next_snap += 1;
                }
                if let Some(f) = rec.full.as_mut() {
                    f.push(*x);
                }
                rec.terminal = *x;
            })?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    let snapshots = snap_steps
        .iter()
        .enumerate()
        .map(|(j, &(t, step))| Snapshot { t, step, states: records.iter().map(|r| r.snaps[j]).collect() })
        .collect();
    Ok(PathEnsemble {
        steps,
        snapshots,
        exit_step: records.iter().map(|r| r.exit).collect(),
        min_radius: records.iter().map(|r| r.min_r).collect(),
        terminal: records.iter().map(|r| r.terminal).collect(),
        max_increment: records.iter().map(|r| r.max_inc).fold(0.0, f64::max),
        full: spec.record_full.then(|| records.into_iter().map(|r| r.full.unwrap_or_default()).collect()),
        spec,
    })
}

impl PathEnsemble {
    pub fn exit_fraction(&self) -> f64 {
        self.exit_step.iter().filter(|e| e.is_some()).count() as f64 / self.spec.paths as f64
    }

    /// States at time `t`: a stored snapshot, or the terminal states at the horizon.
    pub fn states_at(&self, t: f64) -> Result<&[[f64; 3]]> {
        let step = self.spec.step_of(t)?;
        if step == self.steps {
            return Ok(&self.terminal);
        }
        self.snapshots
            .iter()
            .find(|s| s.step == step)
            .map(|s| s.states.as_slice())
            .ok_or_else(|| Error::InvalidSpec(format!("no snapshot stored at t={t}")))
    }

    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            paths: self.spec.paths,
            dt: self.spec.dt,
            horizon: self.spec.horizon,
            seed: self.spec.seed,
            x: self.spec.x,
            scheme: self.spec.scheme(),
            schedule_n: self.spec.schedule_n,
            exit_radius: self.spec.exit_radius,
            exit_fraction: self.exit_fraction(),
            max_increment: self.max_increment,
        }
    }

    /// Replays every path with its own stream; `make` builds a per-path visitor
    /// whose `finish` value is collected in path order.
    pub fn replay<V, T>(&self, make: impl Fn() -> V + Sync) -> Result<Vec<T>>
    where
        V: PathVisitor<Output = T>,
        T: Send,
    {
        (0..self.spec.paths as u64)
            .into_par_iter()
            .map(|p| {
                let mut v = make();
                run_path(&self.spec, p, |k, x| v.visit(k, x))?;
                Ok(v.finish())
            })
            .collect()
    }
}

pub trait PathVisitor {
    type Output;
    fn visit(&mut self, k: usize, x: &[f64; 3]);
    fn finish(self) -> Self::Output;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(paths: usize, seed: u64) -> EnsembleSpec {
        let mut s = EnsembleSpec::new(FieldSpec::zero(3), DispersionSpec::identity(3), [0.0; 3], paths, 0.01, 0.5, seed);
        s.snapshot_times = vec![0.25];
        s
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = simulate_ensemble(free(64, 7)).unwrap();
        let b = simulate_ensemble(free(64, 7)).unwrap();
        assert_eq!(a.terminal, b.terminal);
        assert_eq!(a.snapshots, b.snapshots);
        let c = simulate_ensemble(free(64, 8)).unwrap();
        assert_ne!(a.terminal, c.terminal);
    }

    #[test]
    fn step_larger_than_heat_time_is_refused() {
        let mut s = free(4, 1);
        s.eps = Some(1.0 / 1024.0);
        assert!(matches!(simulate_ensemble(s), Err(Error::BadStep { .. })));
    }

    #[test]
    fn exited_paths_freeze() {
        let mut s = free(32, 3);
        s.exit_radius = 0.2;
        s.record_full = true;
        let e = simulate_ensemble(s).unwrap();
        let full = e.full.as_ref().unwrap();
        for (p, ex) in e.exit_step.iter().enumerate() {
            if let Some(k) = ex {
                assert!(full[p][*k..].iter().all(|x| *x == full[p][*k]));
            }
        }
        assert!(e.exit_fraction() > 0.5);
    }
}
