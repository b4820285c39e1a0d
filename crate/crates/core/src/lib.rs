//! Numerical laboratory for weak solutions of Itô and Stratonovich SDEs whose
//! drift is form-bounded (possibly with critical, Hardy-type singularities)
//! and whose dispersion matrix may be discontinuous.
//!
//! The crate is organised along the pipeline an experiment follows:
//!
//! * [`coefficients`]: drift and dispersion families, their derived fields and
//!   relative form bounds.
//! * [`admissibility`]: the solvability condition on the relative bounds, the
//!   Stratonovich correction and the Hardy regime classification.
//! * [`regularization`]: truncation, cutoff and heat-semigroup mollification
//!   of the coefficients.
//! * [`semigroup`]: the discrete non-divergence operator, its resolvent and
//!   semigroup, and numerical monitors of the gradient and weighted estimates.
//! * [`sde`]: Euler–Maruyama ensembles and the statistical tests built on them.

pub mod admissibility;
pub mod coefficients;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod regularization;
pub mod sampled;
pub mod sde;
pub mod semigroup;
pub mod spectral;

pub use error::{Error, Result};
pub use grid::Grid;
