//! The solvability condition on the relative bounds, its Itô and Stratonovich
//! variants, the Stratonovich correction field and the Hardy regime labels.
//!
//! With `δ̂` the variant's effective bound, the condition at exponent `q` is
//!
//! ```text
//! margin1 = 1 - (q/4)(√γ + ‖a-I‖_∞ √δ̂)                                  > 0
//! margin2 = (q-1)(1 - q√γ/2) - (√δ̂√δ_a + δ̂) q²/4
//!           - (q-2) q √δ̂/2 - ‖a-I‖_∞ q √δ̂/2                            > 0
//! ```
//!
//! together with `q > max(2, d-2)`. Zero margins count as infeasible.

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    fd_stratonovich_samples, DerivativeMode, DispersionSpec, FieldKind, FieldSpec,
};
use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// `δ̂ = δ`.
    Raw,
    /// `δ̂ = δ + δ_a`.
    Ito,
    /// `δ̂ = δ + δ_a + δ_c`.
    Stratonovich,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Raw => "raw",
            Variant::Ito => "ito",
            Variant::Stratonovich => "stratonovich",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub d: usize,
    pub q: f64,
    pub variant: Variant,
    pub effective_delta: f64,
    pub gamma: f64,
    pub delta_a: f64,
    pub a_dev: f64,
    pub margin1: f64,
    pub margin2: f64,
    pub feasible: bool,
    pub q_star: Option<f64>,
    /// Every feasible grid point of a `search_q` scan, to expose non-convex feasible sets.
    pub feasible_qs: Vec<f64>,
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(Error::NegativeBound { name: name.into(), value: v });
    }
    Ok(())
}

/// `δ̂` for the given variant.
pub fn effective_delta(variant: Variant, delta: f64, delta_a: f64, delta_c: Option<f64>) -> Result<f64> {
    nonneg("delta", delta)?;
    nonneg("delta_a", delta_a)?;
    Ok(match variant {
        Variant::Raw => delta,
        Variant::Ito => delta + delta_a,
        Variant::Stratonovich => {
            let dc = delta_c.ok_or_else(|| Error::InvalidSpec("stratonovich variant needs delta_c".into()))?;
            nonneg("delta_c", dc)?;
            delta + delta_a + dc
        }
    })
}

/// Both margins at `q` for the effective bound `delta_hat`.
pub fn check_cond0(d: usize, q: f64, delta_hat: f64, gamma: f64, delta_a: f64, a_dev: f64) -> Result<AdmissibilityReport> {
    check_cond0_variant(d, q, Variant::Raw, delta_hat, gamma, delta_a, a_dev)
}

pub fn check_cond0_variant(
    d: usize,
    q: f64,
    variant: Variant,
    delta_hat: f64,
    gamma: f64,
    delta_a: f64,
    a_dev: f64,
) -> Result<AdmissibilityReport> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    nonneg("delta", delta_hat)?;
    nonneg("gamma", gamma)?;
    nonneg("delta_a", delta_a)?;
    nonneg("a_dev", a_dev)?;
    if !(q > 0.0) {
        return Err(Error::InvalidSpec(format!("q must be positive, got {q}")));
    }
    let sd = delta_hat.sqrt();
    let sg = gamma.sqrt();
    let margin1 = 1.0 - q / 4.0 * (sg + a_dev * sd);
    let margin2 = (q - 1.0) * (1.0 - q * sg / 2.0)
        - (sd * delta_a.sqrt() + delta_hat) * q * q / 4.0
        - (q - 2.0) * q * sd / 2.0
        - a_dev * q * sd / 2.0;
    let q_floor = (d as f64 - 2.0).max(2.0);
    let feasible = margin1 > 0.0 && margin2 > 0.0 && q > q_floor;
    Ok(AdmissibilityReport {
        d,
        q,
        variant,
        effective_delta: delta_hat,
        gamma,
        delta_a,
        a_dev,
        margin1,
        margin2,
        feasible,
        q_star: None,
        feasible_qs: vec![],
    })
}

/// `q_min, q_min + step, ..., ≤ q_max`; `q_min` defaults to `max(2, d-2) + step`.
pub fn q_grid(d: usize, q_min: Option<f64>, q_max: f64, step: f64) -> Vec<f64> {
    let floor = (d as f64 - 2.0).max(2.0);
    let start = q_min.unwrap_or(floor + step);
    let n = ((q_max - start) / step + 1e-9).floor();
    if !(n >= 0.0) || !(step > 0.0) {
        return vec![];
    }
    (0..=n as usize).map(|k| start + k as f64 * step).collect()
}

/// Report at the smallest feasible `q` of the grid, or at the grid point with
/// the largest smaller margin when none is feasible.
pub fn search_q(d: usize, delta_hat: f64, gamma: f64, delta_a: f64, a_dev: f64, qs: &[f64]) -> Result<AdmissibilityReport> {
    search_q_variant(d, Variant::Raw, delta_hat, gamma, delta_a, a_dev, qs)
}

pub fn search_q_variant(
    d: usize,
    variant: Variant,
    delta_hat: f64,
    gamma: f64,
    delta_a: f64,
    a_dev: f64,
    qs: &[f64],
) -> Result<AdmissibilityReport> {
    if qs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let floor = (d as f64 - 2.0).max(2.0);
    if qs.windows(2).any(|w| w[1] <= w[0]) || qs[0] <= floor {
        return Err(Error::InvalidSpec(format!("q grid must increase strictly and start above {floor}")));
    }
    let reports: Vec<AdmissibilityReport> = qs
        .iter()
        .map(|&q| check_cond0_variant(d, q, variant, delta_hat, gamma, delta_a, a_dev))
        .collect::<Result<_>>()?;
    let feasible_qs: Vec<f64> = reports.iter().filter(|r| r.feasible).map(|r| r.q).collect();
    let mut best = match reports.iter().find(|r| r.feasible) {
        Some(r) => r.clone(),
        None => reports
            .iter()
            .max_by(|a, b| a.margin1.min(a.margin2).total_cmp(&b.margin1.min(b.margin2)))
            .cloned()
            .expect("non-empty grid"),
    };
    best.q_star = feasible_qs.first().copied();
    best.feasible_qs = feasible_qs;
    Ok(best)
}

/// The Stratonovich correction `c^i = (1/√2) Σ_{r,j} (∇_r σ_ij) σ_rj` as a drift field.
pub fn stratonovich_correction(disp: &DispersionSpec, mode: DerivativeMode, grid: Option<&Grid>) -> Result<FieldSpec> {
    if disp.is_constant() {
        return Ok(FieldSpec::zero(disp.d));
    }
    match mode {
        DerivativeMode::Analytic => {
            if !disp.supports_analytic_correction() {
                return Err(Error::UnsupportedAnalytic(format!("Stratonovich correction for {}", disp.kind_name())));
            }
            Ok(FieldSpec { d: disp.d, kind: FieldKind::StratonovichCorrection { dispersion: Box::new(disp.clone()) } })
        }
        DerivativeMode::FiniteDifference => {
            let grid = grid.ok_or_else(|| Error::InvalidSpec("finite-difference mode needs a grid".into()))?;
            FieldSpec::grid_sampled(fd_stratonovich_samples(disp, grid)?)
        }
    }
}

/// `δ_c ≤ ½ ‖σ‖²_∞ Σ_{r,j} δ_rj`.
pub fn bound_delta_c(sigma_bounds: &[f64], sigma_sup: f64) -> Result<f64> {
    nonneg("sigma_sup", sigma_sup)?;
    for &v in sigma_bounds {
        nonneg("delta_rj", v)?;
    }
    Ok(0.5 * sigma_sup * sigma_sup * sigma_bounds.iter().sum::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBounds {
    /// Row-major `d×d`, entry `[r*d + ℓ]`.
    pub gamma_rl: Vec<f64>,
    pub gamma: f64,
}

/// `γ_rℓ ≤ [‖σ_{·ℓ}‖_∞ (Σ_j δ_rj)^{1/2} + ‖σ‖_∞ δ_rℓ^{1/2}]²`.
pub fn bound_gamma_from_sigma(sigma_bounds: &[f64], column_sups: &[f64], sigma_sup: f64) -> Result<GammaBounds> {
    let d = column_sups.len();
    if sigma_bounds.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: sigma_bounds.len() });
    }
    nonneg("sigma_sup", sigma_sup)?;
    for &v in sigma_bounds.iter().chain(column_sups) {
        nonneg("bound", v)?;
    }
    let mut gamma_rl = vec![0.0; d * d];
    for r in 0..d {
        let row: f64 = sigma_bounds[r * d..(r + 1) * d].iter().sum();
        for l in 0..d {
            gamma_rl[r * d + l] = (column_sups[l] * row.sqrt() + sigma_sup * sigma_bounds[r * d + l].sqrt()).powi(2);
        }
    }
    let gamma = gamma_rl.iter().sum();
    Ok(GammaBounds { gamma_rl, gamma })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Subcritical,
    NoSolution,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub label: Regime,
    pub sqrt_delta: f64,
    /// `min(1, 2/(d-2))`.
    pub subcritical_below: f64,
    /// `2d/(d-2)`.
    pub no_solution_from: f64,
}

pub fn classify_hardy_regime(delta: f64, d: usize) -> Result<RegimeLabel> {
    if d < 3 {
        return Err(Error::InvalidDimension(d));
    }
    nonneg("delta", delta)?;
    let dm2 = d as f64 - 2.0;
    let sub = (2.0 / dm2).min(1.0);
    let nosol = 2.0 * d as f64 / dm2;
    let s = delta.sqrt();
    let label = if s < sub {
        Regime::Subcritical
    } else if s >= nosol {
        Regime::NoSolution
    } else {
        Regime::Indeterminate
    };
    Ok(RegimeLabel { label, sqrt_delta: s, subcritical_below: sub, no_solution_from: nosol })
}

/// Closed-form bounds attached to an analytic dispersion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionBounds {
    pub delta_a: f64,
    pub gamma: f64,
    pub gamma_rl: Vec<f64>,
    pub delta_rj: Vec<f64>,
    pub delta_c: f64,
    pub a_dev: f64,
    pub sigma_sup: f64,
    pub column_sups: Vec<f64>,
}

/// Hardy-type bounds for the analytic dispersion families (`None` otherwise).
pub fn analytic_dispersion_bounds(disp: &DispersionSpec) -> Option<DispersionBounds> {
    let (delta_a, gamma_rl, delta_rj) = disp.derivative_bounds_analytic()?;
    let (sigma_sup, column_sups) = disp.sigma_sups_analytic()?;
    let a_dev = disp.a_dev_analytic()?;
    let delta_c = bound_delta_c(&delta_rj, sigma_sup).ok()?;
    Some(DispersionBounds {
        delta_a,
        gamma: gamma_rl.iter().sum(),
        gamma_rl,
        delta_rj,
        delta_c,
        a_dev,
        sigma_sup,
        column_sups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cond0_worked_example() {
        let r = check_cond0(3, 3.0, 0.04, 0.01, 0.01, 0.5).unwrap();
        assert!((r.margin1 - 0.85).abs() < 1e-12);
        assert!((r.margin2 - 1.115).abs() < 1e-12);
        assert!(r.feasible);
    }

    #[test]
    fn free_laplacian_margins() {
        let r = check_cond0(3, 3.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!((r.margin1, r.margin2, r.feasible), (1.0, 2.0, true));
    }

    #[test]
    fn q_must_exceed_floor() {
        let r = check_cond0(5, 3.0, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert!(!r.feasible);
        assert!(matches!(check_cond0(3, 3.0, -0.1, 0.0, 0.0, 0.0), Err(Error::NegativeBound { .. })));
    }

    #[test]
    fn search_reports_smallest_feasible_q() {
        let qs = q_grid(3, None, 200.0, 0.05);
        assert!((qs[0] - 2.05).abs() < 1e-12);
        let r = search_q(3, 0.0, 0.0, 0.0, 0.0, &qs).unwrap();
        assert_eq!(r.q_star, Some(qs[0]));
        assert!(search_q(3, 0.5, 0.0, 0.0, 0.0, &qs).unwrap().q_star.is_some());
        let bad = search_q(3, 1.2, 0.0, 0.0, 0.0, &qs).unwrap();
        assert!(bad.q_star.is_none() && !bad.feasible && bad.feasible_qs.is_empty());
        assert!(matches!(search_q(3, 0.5, 0.0, 0.0, 0.0, &[]), Err(Error::EmptyGrid)));
    }

    #[test]
    fn delta_c_and_gamma_examples() {
        assert_eq!(bound_delta_c(&[0.0; 9], 3.0).unwrap(), 0.0);
        assert!((bound_delta_c(&[0.01; 9], 2.0).unwrap() - 0.18).abs() < 1e-15);
        let mut single = [0.0; 9];
        single[0] = 0.04;
        assert!((bound_delta_c(&single, 1.0).unwrap() - 0.02).abs() < 1e-15);

        let g = bound_gamma_from_sigma(&[0.01; 9], &[1.0; 3], 1.0).unwrap();
        let each = (0.03f64.sqrt() + 0.1).powi(2);
        assert!(g.gamma_rl.iter().all(|v| (v - each).abs() < 1e-14));
        assert!((g.gamma - 9.0 * each).abs() < 1e-13);
        assert!((g.gamma - 0.672).abs() < 1e-3);

        let g = bound_gamma_from_sigma(&single, &[1.0; 3], 1.0).unwrap();
        assert!((g.gamma_rl[0] - 0.16).abs() < 1e-14);
        assert!((g.gamma_rl[1] - 0.04).abs() < 1e-14);
        assert!((g.gamma_rl[2] - 0.04).abs() < 1e-14);
        assert!(g.gamma_rl[3..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn regime_examples() {
        assert_eq!(classify_hardy_regime(0.25, 3).unwrap().label, Regime::Subcritical);
        assert_eq!(classify_hardy_regime(49.0, 3).unwrap().label, Regime::NoSolution);
        assert_eq!(classify_hardy_regime(4.0, 3).unwrap().label, Regime::Indeterminate);
        assert!(classify_hardy_regime(1.0, 2).is_err());
    }

    #[test]
    fn constant_sigma_has_zero_correction() {
        let c = stratonovich_correction(&DispersionSpec::identity(3), DerivativeMode::Analytic, None).unwrap();
        assert_eq!(c.eval(&[0.3, 0.1, 0.2]).unwrap(), vec![0.0; 3]);
    }
}
