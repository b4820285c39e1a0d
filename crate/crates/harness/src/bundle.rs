//! The report bundle: one typed section per pipeline stage, the verdicts
//! derived from them, and the wall-clock data kept apart in `timestamps`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sdelab_core::admissibility::{AdmissibilityReport, RegimeLabel};
use sdelab_core::coefficients::FormBoundEstimate;
use sdelab_core::regularization::PreservationTable;
use sdelab_core::sde::{
    CrosscheckReport, DriftIntegrability, EnsembleSummary, HittingTable, MartingaleReport, MomentCheck, Scheme,
};
use sdelab_core::semigroup::{ConvergenceTable, MMatrixAudit, Mu0Fit, StarReport, WeightCheck, WeightedReport};

/// Tag attached to every stage downstream of an infeasible admissibility check.
pub const OUTSIDE_COND0: &str = "outside (cond0)";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bounds,
    Admissibility,
    Regularization,
    Resolvent,
    Simulate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Bounds => "bounds",
            Stage::Admissibility => "admissibility",
            Stage::Regularization => "regularization",
            Stage::Resolvent => "resolvent",
            Stage::Simulate => "simulate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    pub error: Option<String>,
    pub tag: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub id: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started: String,
    pub finished: String,
    pub stage_seconds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionBoundsUsed {
    /// `analytic` or `config`.
    pub source: String,
    pub delta_a: f64,
    pub gamma: f64,
    pub a_dev: f64,
    pub delta_c: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub drift: FormBoundEstimate,
    pub regime: Option<RegimeLabel>,
    pub dispersion: DispersionBoundsUsed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRow {
    pub n: u32,
    pub eps: f64,
    pub drift_realization: String,
    pub dispersion_realization: String,
    /// `max |b_n|` over the grid nodes.
    pub drift_sup: f64,
    /// Smallest eigenvalue of `a_n` over the grid nodes.
    pub a_min_eig: f64,
    pub a_dev: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub rows: Vec<RegularizationRow>,
    pub preservation: Option<PreservationTable>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositivityRow {
    pub mu: f64,
    pub min_u: f64,
    pub sup_u: f64,
    pub sup_f: f64,
    /// `‖u‖_∞ (μ - μ₀) / ‖f‖_∞`.
    pub contraction_ratio: f64,
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSection {
    pub weight_check: WeightCheck,
    pub estimates: WeightedReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeumannSection {
    pub mu: f64,
    pub terms: usize,
    pub term_norms: Vec<f64>,
    pub a_dev: f64,
    pub delta_est: f64,
    pub rel_sup_diff: f64,
    pub perturbation_norm: f64,
}

/// Sensitivity of the resolvent to the Dirichlet box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainAudit {
    pub mu: f64,
    pub extent: f64,
    pub extent_wide: f64,
    pub nodes_wide: usize,
    /// `sup |u - u_wide| / sup |u|` over the original box.
    pub rel_sup_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    pub n: u32,
    pub q: f64,
    pub audit: MMatrixAudit,
    pub mu0: Mu0Fit,
    pub positivity: Vec<PositivityRow>,
    pub star: Option<StarReport>,
    pub convergence: Option<ConvergenceTable>,
    pub weighted: Option<WeightedSection>,
    pub neumann: Option<NeumannSection>,
    #[serde(default)]
    pub domain: Option<DomainAudit>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n: u32,
    pub scheme: Scheme,
    pub summary: EnsembleSummary,
    pub martingale: Vec<MartingaleReport>,
    pub control: Option<Vec<MomentCheck>>,
    pub integrability: Option<DriftIntegrability>,
    pub hitting: Option<HittingTable>,
    pub crosscheck: Option<CrosscheckReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub experiment_id: String,
    /// The config exactly as hashed.
    pub config_echo: String,
    /// SHA-256 of `config_echo`, hex encoded.
    pub config_hash: String,
    pub cond0_tag: Option<String>,
    pub stages: Vec<StageRecord>,
    pub bounds: Option<BoundsReport>,
    pub admissibility: Option<AdmissibilityReport>,
    pub regularization: Option<RegularizationReport>,
    pub resolvent: Option<ResolventReport>,
    pub simulation: Option<SimulationReport>,
    pub acceptance: Vec<Verdict>,
    pub timestamps: Timestamps,
}

pub fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl ReportBundle {
    pub fn empty(experiment_id: &str, config_echo: String) -> Self {
        Self {
            experiment_id: experiment_id.into(),
            config_hash: sha256_hex(&config_echo),
            config_echo,
            cond0_tag: None,
            stages: vec![],
            bounds: None,
            admissibility: None,
            regularization: None,
            resolvent: None,
            simulation: None,
            acceptance: vec![],
            timestamps: Timestamps::default(),
        }
    }

    pub fn hash_matches(&self) -> bool {
        sha256_hex(&self.config_echo) == self.config_hash
    }

    /// The bundle with the wall-clock field cleared, for determinism audits.
    pub fn without_timestamps(&self) -> Self {
        Self { timestamps: Timestamps::default(), ..self.clone() }
    }

    pub fn failed_stages(&self) -> Vec<&StageRecord> {
        self.stages.iter().filter(|s| s.status == StageStatus::Failed).collect()
    }

    pub fn all_verdicts_pass(&self) -> bool {
        self.acceptance.iter().all(|v| v.pass)
    }
}
