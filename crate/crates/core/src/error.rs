use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies within {tol:e} of a singular point")]
    SingularPoint { point: Vec<f64>, tol: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dimension {0} is not supported (d >= 3 required)")]
    InvalidDimension(usize),
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("grid node {node:?} coincides with a singular point")]
    SingularOnGrid { node: [f64; 3] },
    #[error("form-bound estimates belong to different classes")]
    MixedClasses,
    #[error("form-bound estimates use different lambda values ({0} vs {1})")]
    MixedLambda(f64, f64),
    #[error("no analytic derivative available for {0}")]
    UnsupportedAnalytic(String),
    #[error("bound `{name}` is negative ({value})")]
    NegativeBound { name: String, value: f64 },
    #[error("q grid is empty")]
    EmptyGrid,
    #[error("grid spacing h={h} does not resolve heat time eps={eps} (h^2 <= eps required)")]
    UnderResolved { h: f64, eps: f64 },
    #[error("sampled data covers half-width {available} but {needed} is required")]
    ExtentTooSmall { needed: f64, available: f64 },
    #[error("matrix at {point:?} has minimum eigenvalue {min_eig} (must be >= 1)")]
    NonPsdMatrix { point: Vec<f64>, min_eig: f64 },
    #[error("Krylov solver failed after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },
    #[error("mu={mu} does not exceed mu0={mu0}")]
    MuTooSmall { mu: f64, mu0: f64 },
    #[error("ill-conditioned fit: {0}")]
    FitIllConditioned(String),
    #[error("invalid weight: {0}")]
    WeightInvalid(String),
    #[error("operators or grid functions live on different grids")]
    GridMismatch,
    #[error("Neumann series terms stopped decreasing at term {term} (norm {norm:e})")]
    SeriesDivergence { term: usize, norm: f64 },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: u64, step: usize },
    #[error("time step {dt} violates dt <= {max}")]
    BadStep { dt: f64, max: f64 },
    #[error("integrand variant {integrand} does not match ensemble scheme {ensemble}")]
    MismatchedVariant { integrand: String, ensemble: String },
    #[error("observable support is not inside the PDE box: {0}")]
    BoxMismatch(String),
    #[error("point {0:?} lies outside the sampled grid")]
    OutsideGrid(Vec<f64>),
    #[error("mollified or grid-sampled coefficient has no realized data")]
    Unrealized,
    #[error("malformed grid file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
