//! Experiment configuration. Configs are JSON documents; `docs/config.md`
//! describes every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdelab_core::admissibility::analytic_dispersion_bounds;
use sdelab_core::coefficients::{DispersionKind, DispersionSpec, FieldKind, FieldSpec};
use sdelab_core::regularization::EpsRule;
use sdelab_core::sde::Observable;
use sdelab_core::semigroup::SolverOptions;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeVariant {
    #[default]
    Ito,
    Stratonovich,
}

impl SdeVariant {
    pub fn name(self) -> &'static str {
        match self {
            SdeVariant::Ito => "ito",
            SdeVariant::Stratonovich => "stratonovich",
        }
    }
}

impl std::str::FromStr for SdeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ito" => Ok(SdeVariant::Ito),
            "stratonovich" => Ok(SdeVariant::Stratonovich),
            other => Err(format!("unknown variant `{other}` (expected ito or stratonovich)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: String,
    pub drift: FieldSpec,
    #[serde(default = "identity3")]
    pub dispersion: DispersionSpec,
    #[serde(default)]
    pub variant: SdeVariant,
    #[serde(default)]
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub regularization: RegularizationConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub resolvent: Option<ResolventConfig>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMethod {
    /// Closed form for pure Hardy drifts, grid estimate otherwise.
    #[default]
    Auto,
    Grid,
}

/// Relative bounds of the dispersion, for dispersions without closed forms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionBoundsInput {
    pub delta_a: f64,
    pub gamma: f64,
    pub a_dev: f64,
    #[serde(default)]
    pub delta_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub method: BoundMethod,
    /// Overrides the drift estimate.
    #[serde(default)]
    pub drift_delta: Option<f64>,
    #[serde(default)]
    pub dispersion: Option<DispersionBoundsInput>,
    #[serde(default = "default_q_max")]
    pub q_max: f64,
    #[serde(default = "default_q_step")]
    pub q_step: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self { lambda: 1.0, method: BoundMethod::Auto, drift_delta: None, dispersion: None, q_max: 6.0, q_step: 0.05 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RealizationChoice {
    /// Exact radial mollification when the coefficient is radial about the
    /// origin, grid convolution otherwise.
    #[default]
    Auto,
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizationConfig {
    #[serde(default)]
    pub eps_rule: EpsRule,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<u32>,
    #[serde(default)]
    pub realization: RealizationChoice,
    /// Estimate `δ(b_n)/δ(b)` along the schedule (grid mollification).
    #[serde(default)]
    pub preservation: bool,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self { eps_rule: EpsRule::default(), n_list: default_n_list(), realization: RealizationChoice::Auto, preservation: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Half-width `L` of the box `[-L, L]³`.
    pub extent: f64,
    /// Nodes per axis.
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpInput {
    #[serde(default)]
    pub centre: [f64; 3],
    #[serde(default = "one")]
    pub radius: f64,
}

impl Default for BumpInput {
    fn default() -> Self {
        Self { centre: [0.0; 3], radius: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarConfig {
    pub mu_list: Vec<f64>,
    #[serde(default)]
    pub centre: [f64; 3],
    pub radius: f64,
    /// The bump radius scales as `radius·√(mu_ref/μ)`.
    pub mu_ref: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedConfig {
    pub l: f64,
    pub nu: f64,
    pub mu_list: Vec<f64>,
    /// Regularization level of the `|b_m|` factor.
    pub m: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeumannConfig {
    pub mu: f64,
    #[serde(default = "default_max_terms")]
    pub max_terms: usize,
}

/// Re-solve on a box `factor` times wider at the same spacing and compare on
/// the original box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainAuditConfig {
    pub mu: f64,
    #[serde(default = "default_domain_factor")]
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolventConfig {
    #[serde(default = "default_mu_list")]
    pub mu_list: Vec<f64>,
    /// Regularization level of the operator; defaults to the first schedule entry.
    #[serde(default)]
    pub n: Option<u32>,
    /// Integrability exponent; defaults to the smallest admissible `q`.
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub input: BumpInput,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub star: Option<StarConfig>,
    #[serde(default)]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default)]
    pub weighted: Option<WeightedConfig>,
    #[serde(default)]
    pub neumann: Option<NeumannConfig>,
    #[serde(default)]
    pub domain: Option<DomainAuditConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeGridConfig {
    pub extent: f64,
    pub nodes: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrosscheckConfig {
    pub t: f64,
    pub observable: Observable,
    pub coarse: PdeGridConfig,
    pub fine: PdeGridConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HittingConfig {
    pub n_list: Vec<u32>,
    pub r_in: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_x")]
    pub x: [f64; 3],
    #[serde(default = "default_exit_radius")]
    pub exit_radius: f64,
    /// Times of the martingale tests; the horizon when empty.
    #[serde(default)]
    pub times: Vec<f64>,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    /// Regularization level of the simulated coefficients; defaults to the
    /// first schedule entry.
    #[serde(default)]
    pub schedule_n: Option<u32>,
    /// Driftless `σ = I` control reproducing `Var X_i(t) = 2t`.
    #[serde(default)]
    pub control: bool,
    /// Clip levels for `E ∫|b(X)| ∧ clip`.
    #[serde(default)]
    pub integrability_clips: Vec<f64>,
    #[serde(default)]
    pub hitting: Option<HittingConfig>,
    #[serde(default)]
    pub crosscheck: Option<CrosscheckConfig>,
}

fn one() -> f64 {
    1.0
}
fn identity3() -> DispersionSpec {
    DispersionSpec::identity(3)
}
fn default_q_max() -> f64 {
    6.0
}
fn default_q_step() -> f64 {
    0.05
}
fn default_n_list() -> Vec<u32> {
    vec![4, 8, 16]
}
fn default_mu_list() -> Vec<f64> {
    vec![10.0, 30.0, 100.0, 300.0, 1000.0]
}
fn default_domain_factor() -> f64 {
    1.5
}

fn default_max_terms() -> usize {
    200
}
fn default_x() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}
fn default_exit_radius() -> f64 {
    50.0
}
fn default_observables() -> Vec<Observable> {
    vec![
        Observable::Coordinate { i: 0 },
        Observable::Product { i: 0, j: 1 },
        Observable::Bump { centre: [1.0, 0.0, 0.0], radius: 0.75 },
    ]
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::ConfigInvalid(msg.into())
}

fn field_paths<'a>(f: &'a FieldSpec, out: &mut Vec<&'a Path>) {
    match &f.kind {
        FieldKind::GridSampled { path: Some(p), .. } => out.push(p),
        FieldKind::Sum { children } => children.iter().for_each(|c| field_paths(c, out)),
        FieldKind::Scaled { child, .. } => field_paths(child, out),
        FieldKind::Mollified { base, .. } => field_paths(base, out),
        FieldKind::Divergence { dispersion } | FieldKind::StratonovichCorrection { dispersion } => {
            dispersion_paths(dispersion, out)
        }
        _ => {}
    }
}

fn dispersion_paths<'a>(d: &'a DispersionSpec, out: &mut Vec<&'a Path>) {
    match &d.kind {
        DispersionKind::GridSampled { path: Some(p), .. } => out.push(p),
        DispersionKind::Sum { children } => children.iter().for_each(|c| dispersion_paths(c, out)),
        DispersionKind::Mollified { base, .. } => dispersion_paths(base, out),
        _ => {}
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("schema: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads and validates a config; relative data paths resolve against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let cfg = Self::from_json(&text)?;
        cfg.validate(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }

    /// Every data file referenced by the coefficients.
    pub fn data_files(&self) -> Vec<&Path> {
        let mut out = Vec::new();
        field_paths(&self.drift, &mut out);
        dispersion_paths(&self.dispersion, &mut out);
        out
    }

    /// Schema checks plus existence of every referenced data file.
    pub fn validate(&self, base_dir: &Path) -> Result<(), HarnessError> {
        for p in self.data_files() {
            let full = base_dir.join(p);
            if !full.is_file() {
                return Err(invalid(format!("referenced file {} does not exist", full.display())));
            }
        }
        self.validate_schema()
    }

    pub fn validate_schema(&self) -> Result<(), HarnessError> {
        if self.id.trim().is_empty() {
            return Err(invalid("id is empty"));
        }
        if self.drift.d != 3 || self.dispersion.d != 3 {
            return Err(invalid("only d = 3 is supported"));
        }
        self.drift.validate().map_err(|e| invalid(format!("drift: {e}")))?;
        self.dispersion.validate().map_err(|e| invalid(format!("dispersion: {e}")))?;
        if !(self.grid.extent > 0.0) || self.grid.nodes < 3 {
            return Err(invalid("grid needs extent > 0 and at least 3 nodes"));
        }
        if !(self.bounds.lambda > 0.0) || !(self.bounds.q_step > 0.0) || !(self.bounds.q_max > 2.0) {
            return Err(invalid("bounds need lambda > 0, q_step > 0 and q_max > 2"));
        }
        let analytic = analytic_dispersion_bounds(&self.dispersion).is_some();
        if !analytic && self.bounds.dispersion.is_none() {
            return Err(invalid(format!(
                "dispersion `{}` has no closed-form bounds; set bounds.dispersion",
                self.dispersion.kind_name()
            )));
        }
        if self.variant == SdeVariant::Stratonovich && !analytic {
            let dc = self.bounds.dispersion.as_ref().and_then(|b| b.delta_c);
            if dc.is_none() {
                return Err(invalid("stratonovich variant needs bounds.dispersion.delta_c"));
            }
        }
        let r = &self.regularization;
        r.eps_rule.validate().map_err(|e| invalid(format!("eps_rule: {e}")))?;
        if r.n_list.is_empty() || r.n_list.windows(2).any(|w| w[1] <= w[0]) || r.n_list[0] == 0 {
            return Err(invalid("regularization.n_list must be positive and strictly increasing"));
        }
        let in_schedule = |n: u32, what: &str| {
            if r.n_list.contains(&n) {
                Ok(())
            } else {
                Err(invalid(format!("{what} = {n} is not in regularization.n_list")))
            }
        };
        if let Some(rc) = &self.resolvent {
            if rc.mu_list.is_empty() || rc.mu_list.iter().any(|m| !(*m > 0.0)) {
                return Err(invalid("resolvent.mu_list must be non-empty and positive"));
            }
            if let Some(n) = rc.n {
                in_schedule(n, "resolvent.n")?;
            }
            if let Some(q) = rc.q {
                if !(q > 2.0) {
                    return Err(invalid("resolvent.q must exceed 2"));
                }
            }
            if let Some(w) = &rc.weighted {
                in_schedule(w.m, "resolvent.weighted.m")?;
            }
            if let Some(d) = &rc.domain {
                if !(d.mu > 0.0) || !(d.factor > 1.0) {
                    return Err(invalid("resolvent.domain needs mu > 0 and factor > 1"));
                }
            }
        }
        if let Some(ec) = &self.ensemble {
            if ec.paths == 0 || !(ec.dt > 0.0) || !(ec.horizon > 0.0) {
                return Err(invalid("ensemble needs paths > 0, dt > 0 and horizon > 0"));
            }
            if ec.times.iter().any(|t| !(*t > 0.0) || *t > ec.horizon) {
                return Err(invalid("ensemble.times must lie in (0, horizon]"));
            }
            if let Some(n) = ec.schedule_n {
                in_schedule(n, "ensemble.schedule_n")?;
            }
            if let Some(h) = &ec.hitting {
                if h.n_list.is_empty() {
                    return Err(invalid("ensemble.hitting.n_list is empty"));
                }
            }
            if let Some(c) = &ec.crosscheck {
                if !(c.t > 0.0) || c.t > ec.horizon {
                    return Err(invalid("ensemble.crosscheck.t must lie in (0, horizon]"));
                }
                if c.observable.support().is_none() {
                    return Err(invalid("ensemble.crosscheck.observable needs bounded support"));
                }
            }
        }
        Ok(())
    }

    /// Loads referenced data files into the coefficient specs.
    pub fn load_data(&mut self, base_dir: &Path) -> Result<(), HarnessError> {
        self.drift.load_data(base_dir).map_err(|e| invalid(format!("drift data: {e}")))?;
        self.dispersion.load_data(base_dir).map_err(|e| invalid(format!("dispersion data: {e}")))?;
        Ok(())
    }

    /// A driftless `σ = I` config on a tiny grid, for smoke runs.
    pub fn minimal(id: &str) -> Self {
        Self {
            id: id.into(),
            drift: FieldSpec::zero(3),
            dispersion: DispersionSpec::identity(3),
            variant: SdeVariant::Ito,
            bounds: BoundsConfig::default(),
            regularization: RegularizationConfig { n_list: vec![4], ..Default::default() },
            grid: GridConfig { extent: 2.0, nodes: 12 },
            resolvent: Some(ResolventConfig {
                mu_list: vec![1.0, 10.0],
                n: None,
                q: None,
                input: BumpInput::default(),
                solver: SolverOptions::default(),
                star: None,
                convergence: None,
                weighted: None,
                neumann: None,
                domain: None,
            }),
            ensemble: Some(EnsembleConfig {
                paths: 1000,
                dt: 1e-2,
                horizon: 0.5,
                x: [0.0; 3],
                exit_radius: default_exit_radius(),
                times: vec![0.25, 0.5],
                observables: default_observables(),
                schedule_n: None,
                control: true,
                integrability_clips: vec![],
                hitting: None,
                crosscheck: None,
            }),
            seed: 1,
            output_dir: None,
        }
    }
}
