//! Finite-difference realization of `Λ = -a:∇² + b·∇` on a Dirichlet box, its
//! resolvent and implicit-Euler semigroup, and numerical monitors of the
//! gradient, weighted and Neumann-series estimates.

mod convergence;
mod estimates;
mod neumann;
mod operator;
mod resolvent;

pub use convergence::{resolvent_convergence, ConvergenceRow, ConvergenceTable};
pub use estimates::{
    bump, check_unweighted_estimates, check_weighted_estimates, estimate_star_exponents, fit_power_laws,
    weight_derivative_check, weight_derivative_check_grid, EstimateReport, Fitted, StarInput, StarReport, StarRow,
    WeightCheck, WeightSpec, WeightedReport, EXPONENT_TOL,
};
pub use neumann::{neumann_resolvent, perturbation_norm, perturbation_norm_of, NeumannResult, PerturbationNorm, SERIES_TOL};
pub use operator::{assemble_operator, Csr, DiscreteOperator, MMatrixAudit};
pub use resolvent::{apply_semigroup, fit_mu0, solve_resolvent, Mu0Fit, ResolventSolution, SolutionNorms, SolverOptions};
