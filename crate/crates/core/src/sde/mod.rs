//! Euler–Maruyama ensembles for the Itô equation and the Itô form of the
//! Stratonovich equation, and the statistical tests built on them.
//!
//! Paths are not stored by default. Each path owns a deterministic stream, so
//! path functionals (martingale integrals, clipped drift integrals) are
//! computed by replaying the ensemble rather than keeping `N × steps` states.

mod ensemble;
mod observables;
mod statistics;

pub use ensemble::{simulate_ensemble, EnsembleSpec, EnsembleSummary, PathEnsemble, PathVisitor, Scheme, Snapshot, MAX_DT};
pub use observables::Observable;
pub use statistics::{
    drift_integrability, hitting_statistics, law_consistency, martingale_report, martingale_reports, mc_vs_pde_crosscheck,
    mean_se, median_se, moment_check, ConditionalZ, CrosscheckReport, DriftIntegrability, HitRow, HittingTable,
    IntegrabilityRow, LawReport, LawRow, LevelRow, MartingaleIntegrand, MartingaleReport, MomentCheck, PdeValue, Z_MAX,
};
