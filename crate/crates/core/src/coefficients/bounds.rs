use serde::{Deserialize, Serialize};

use super::FieldSpec;
use crate::error::{Error, Result};
use crate::grid::{Grid, GridMeta};
use crate::linalg::power_iteration;
use crate::spectral::DirichletSpectrum;

pub const POWER_REL_TOL: f64 = 1e-6;
pub const POWER_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    /// `‖|b|(λ-Δ)^{-1/2}‖_{2→2} ≤ √δ`.
    FDelta,
    /// `‖|b|(λ-Δ)^{-1/2}‖_{1→1} ≤ δ`.
    Kato,
    /// `‖|b|^{1/2}(λ-Δ)^{-1/4}‖_{2→2} ≤ δ`.
    WeakFHalf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Analytic,
    GridEigen,
    ClosedBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormBoundEstimate {
    pub delta: f64,
    pub lambda: f64,
    pub class_kind: ClassKind,
    pub method: Method,
    pub grid_meta: Option<GridMeta>,
    pub residual: f64,
}

/// `δ = (2κ/(d-2))²` for `κ x/|x|²`, from Hardy's inequality.
pub fn analytic_hardy_delta(kappa: f64, d: usize, lambda: f64) -> Result<FormBoundEstimate> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    if !(kappa >= 0.0) {
        return Err(Error::NegativeBound { name: "kappa".into(), value: kappa });
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidSpec(format!("lambda must be positive, got {lambda}")));
    }
    Ok(FormBoundEstimate {
        delta: (2.0 * kappa / (d - 2) as f64).powi(2),
        lambda,
        class_kind: ClassKind::FDelta,
        method: Method::Analytic,
        grid_meta: None,
        residual: 0.0,
    })
}

/// Relative bound of `field` on the Dirichlet grid, computed with the exact
/// spectral calculus of the 7-point Laplacian.
///
/// * `FDelta`: top eigenvalue of `(λ-Δ_h)^{-1/2} |b|² (λ-Δ_h)^{-1/2}` by power
///   iteration, i.e. the generalized problem `|b|²φ = μ(λ-Δ_h)φ`.
/// * `Kato`: `max_y ((λ-Δ_h)^{-1/2}|b|)(y)`, which is the maximal column sum
///   because the kernel of `(λ-Δ_h)^{-1/2}` is nonnegative and symmetric.
/// * `WeakFHalf`: the norm `‖|b|^{1/2}(λ-Δ_h)^{-1/4}‖_{2→2}`, the square root of
///   the top eigenvalue of `(λ-Δ_h)^{-1/4}|b|(λ-Δ_h)^{-1/4}`.
pub fn estimate_form_bound(field: &FieldSpec, class_kind: ClassKind, lambda: f64, grid: &Grid) -> Result<FormBoundEstimate> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidSpec(format!("lambda must be positive, got {lambda}")));
    }
    let mag = field.magnitude_on(grid)?;
    let sp = DirichletSpectrum::new(grid);
    let out = |delta: f64, residual: f64| FormBoundEstimate {
        delta,
        lambda,
        class_kind,
        method: Method::GridEigen,
        grid_meta: Some(grid.meta()),
        residual,
    };
    if mag.iter().all(|v| *v == 0.0) {
        return Ok(out(0.0, 0.0));
    }
    match class_kind {
        ClassKind::FDelta => {
            let w: Vec<f64> = mag.iter().map(|v| v * v).collect();
            let r = top_eigen(&sp, lambda, 0.5, &w)?;
            Ok(out(r.0, r.1))
        }
        ClassKind::Kato => {
            let k = sp.fractional_resolvent(lambda, 0.5, &mag);
            Ok(out(k.iter().fold(0.0f64, |m, v| m.max(*v)), 0.0))
        }
        ClassKind::WeakFHalf => {
            let r = top_eigen(&sp, lambda, 0.25, &mag)?;
            Ok(out(r.0.sqrt(), r.1))
        }
    }
}

/// Top eigenvalue and residual of `R^s W R^s`, `R = (λ-Δ_h)^{-1}`, `W` diagonal.
fn top_eigen(sp: &DirichletSpectrum, lambda: f64, s: f64, w: &[f64]) -> Result<(f64, f64)> {
    let start = vec![1.0; w.len()];
    let r = power_iteration(
        start,
        |v| {
            let t = sp.fractional_resolvent(lambda, s, v);
            let t: Vec<f64> = t.iter().zip(w).map(|(a, b)| a * b).collect();
            sp.fractional_resolvent(lambda, s, &t)
        },
        POWER_REL_TOL,
        POWER_MAX_ITER,
    )?;
    Ok((r.eigenvalue, r.residual))
}

/// `√δ = Σ √δ_i` for F_δ bounds sharing one `λ`.
pub fn combine_fields(estimates: &[FormBoundEstimate]) -> Result<FormBoundEstimate> {
    let first = estimates.first().ok_or_else(|| Error::InvalidSpec("no estimates to combine".into()))?;
    for e in estimates {
        if e.class_kind != ClassKind::FDelta {
            return Err(Error::MixedClasses);
        }
        if e.lambda != first.lambda {
            return Err(Error::MixedLambda(first.lambda, e.lambda));
        }
        if e.delta < 0.0 {
            return Err(Error::NegativeBound { name: "delta".into(), value: e.delta });
        }
    }
    let root: f64 = estimates.iter().map(|e| e.delta.sqrt()).sum();
    Ok(FormBoundEstimate {
        delta: root * root,
        lambda: first.lambda,
        class_kind: ClassKind::FDelta,
        method: Method::ClosedBound,
        grid_meta: None,
        residual: estimates.iter().map(|e| e.residual).fold(0.0, f64::max),
    })
}
