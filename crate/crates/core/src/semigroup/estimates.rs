use serde::{Deserialize, Serialize};

use super::operator::DiscreteOperator;
use super::resolvent::{solve_resolvent, SolverOptions};
use crate::coefficients::FieldSpec;
use crate::error::{Error, Result};
use crate::grid::{lq_norm, Grid};

/// Tolerance on fitted exponents.
pub const EXPONENT_TOL: f64 = 0.15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub name: String,
    pub value: f64,
    pub expected: Option<f64>,
}

/// One estimate: both sides of an inequality over a `μ` or `n` sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimate_id: String,
    pub mu_list: Vec<f64>,
    pub n_list: Vec<u32>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub ratio: Vec<f64>,
    pub fitted: Vec<Fitted>,
    pub pass: bool,
    pub zero_input: bool,
}

/// The test input of the gradient-scaling monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StarInput {
    Fixed { values: Vec<f64> },
    /// Bump `exp(1 - 1/(1-s))`, `s = |y-c|²/r_μ²`, with `r_μ = radius·√(mu_ref/μ)`:
    /// the parabolic rescaling under which the free resolvent gradient ratio
    /// scales exactly like `μ^{-1/2}`.
    RescaledBump { centre: [f64; 3], radius: f64, mu_ref: f64 },
}

pub fn bump(grid: &Grid, centre: [f64; 3], radius: f64) -> Vec<f64> {
    grid.sample(|y| {
        let s = (0..3).map(|i| (y[i] - centre[i]).powi(2)).sum::<f64>() / (radius * radius);
        if s < 1.0 {
            (1.0 - 1.0 / (1.0 - s)).exp()
        } else {
            0.0
        }
    })
}

impl StarInput {
    fn at(&self, grid: &Grid, mu: f64) -> Result<Vec<f64>> {
        match self {
            StarInput::Fixed { values } if values.len() == grid.len() => Ok(values.clone()),
            StarInput::Fixed { .. } => Err(Error::GridMismatch),
            StarInput::RescaledBump { centre, radius, mu_ref } => Ok(bump(grid, *centre, radius * (mu_ref / mu).sqrt())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarRow {
    pub mu: f64,
    pub f_norm_q: f64,
    pub grad_norm_q: f64,
    pub grad_norm_qj: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarReport {
    pub q: f64,
    pub mu0: f64,
    pub rows: Vec<StarRow>,
    pub first: EstimateReport,
    pub second: EstimateReport,
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, ssr)`.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let ssr = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    (slope, icpt, ssr)
}

/// Power-law fits `ratio_k ≈ K_k (μ - μ₀)^{p_k}` sharing one `μ₀`, which is
/// searched on `[mu0_floor, μ_min/2]` to minimize the summed residual.
pub fn fit_power_laws(mus: &[f64], series: &[&[f64]], mu0_floor: f64) -> Result<(f64, Vec<(f64, f64)>)> {
    if mus.len() < 3 {
        return Err(Error::FitIllConditioned("need at least three mu values".into()));
    }
    let mu_min = mus.iter().copied().fold(f64::INFINITY, f64::min);
    let mu_max = mus.iter().copied().fold(0.0, f64::max);
    if !(mu_min > mu0_floor) || ((mu_max - mu0_floor) / (mu_min - mu0_floor)).log10() < 1.5 {
        return Err(Error::FitIllConditioned("mu list must span 1.5 decades above mu0".into()));
    }
    if series.iter().any(|s| s.iter().any(|v| !(*v > 0.0))) {
        return Err(Error::FitIllConditioned("norms must be positive".into()));
    }
    let logs: Vec<Vec<f64>> = series.iter().map(|s| s.iter().map(|v| v.ln()).collect()).collect();
    let hi = (0.5 * mu_min).max(mu0_floor);
    let candidates = 200;
    let mut best = (f64::INFINITY, mu0_floor);
    for i in 0..=candidates {
        let mu0 = mu0_floor + (hi - mu0_floor) * i as f64 / candidates as f64;
        let x: Vec<f64> = mus.iter().map(|m| (m - mu0).ln()).collect();
        let ssr: f64 = logs.iter().map(|y| line_fit(&x, y).2).sum();
        if ssr < best.0 {
            best = (ssr, mu0);
        }
    }
    let mu0 = best.1;
    let x: Vec<f64> = mus.iter().map(|m| (m - mu0).ln()).collect();
    let fits = logs.iter().map(|y| {
        let (p, c, _) = line_fit(&x, y);
        (p, c.exp())
    });
    Ok((mu0, fits.collect()))
}

/// Gradient scaling of the resolvent: fits the exponents of
/// `‖∇u‖_q/‖f‖_q` and `‖∇u‖_{3q}/‖f‖_q` in `μ - μ₀`, expected `-1/2` and `1/q - 1/2`.
pub fn estimate_star_exponents(
    op: &DiscreteOperator,
    mus: &[f64],
    input: &StarInput,
    q: f64,
    mu0_floor: f64,
    opts: &SolverOptions,
) -> Result<StarReport> {
    let grid = &op.grid;
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        let f = input.at(grid, mu)?;
        let sol = solve_resolvent(op, mu, &f, opts)?;
        let n = sol.norms(grid, q, None);
        rows.push(StarRow {
            mu,
            f_norm_q: lq_norm(grid, &f, q),
            grad_norm_q: n.grad_q,
            grad_norm_qj: n.grad_qj,
            residual: sol.residual,
        });
    }
    let expected = [-0.5, 1.0 / q - 0.5];
    let ids = ["star_grad_q", "star_grad_qj"];
    let lhs: [Vec<f64>; 2] = [rows.iter().map(|r| r.grad_norm_q).collect(), rows.iter().map(|r| r.grad_norm_qj).collect()];
    let rhs: Vec<f64> = rows.iter().map(|r| r.f_norm_q).collect();
    let zero_input = rhs.iter().all(|v| *v == 0.0);
    let ratios: Vec<Vec<f64>> =
        lhs.iter().map(|l| l.iter().zip(&rhs).map(|(a, b)| if *b > 0.0 { a / b } else { 0.0 }).collect()).collect();
    let report = |k: usize, fitted: Vec<Fitted>, pass: bool| EstimateReport {
        estimate_id: ids[k].into(),
        mu_list: mus.to_vec(),
        n_list: vec![],
        lhs: lhs[k].clone(),
        rhs: rhs.clone(),
        ratio: ratios[k].clone(),
        fitted,
        pass,
        zero_input,
    };
    if zero_input {
        return Ok(StarReport { q, mu0: mu0_floor, rows, first: report(0, vec![], true), second: report(1, vec![], true) });
    }
    let (mu0, fits) = fit_power_laws(mus, &[&ratios[0], &ratios[1]], mu0_floor)?;
    let make = |k: usize| {
        let (p, c) = fits[k];
        let fitted = vec![
            Fitted { name: "exponent".into(), value: p, expected: Some(expected[k]) },
            Fitted { name: "constant".into(), value: c, expected: None },
            Fitted { name: "mu0".into(), value: mu0, expected: None },
        ];
        report(k, fitted, (p - expected[k]).abs() <= EXPONENT_TOL)
    };
    Ok(StarReport { q, mu0, rows, first: make(0), second: make(1) })
}

/// `ρ(y) = (1 + l|y|²)^{-ν}`, paired with the exponent `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub l: f64,
    pub nu: f64,
    pub q: f64,
}

impl WeightSpec {
    pub fn validate(&self, d: usize) -> Result<()> {
        if !(self.l > 0.0) {
            return Err(Error::WeightInvalid(format!("l must be positive, got {}", self.l)));
        }
        let floor = d as f64 / (2.0 * self.q) + 1.0;
        if !(self.nu > floor) {
            return Err(Error::WeightInvalid(format!("nu={} must exceed d/(2q)+1={floor}", self.nu)));
        }
        Ok(())
    }

    pub fn rho(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        (1.0 + self.l * r2).powf(-self.nu)
    }

    pub fn grad(&self, y: &[f64]) -> Vec<f64> {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let c = -2.0 * self.nu * self.l * (1.0 + self.l * r2).powf(-self.nu - 1.0);
        y.iter().map(|v| c * v).collect()
    }

    pub fn laplacian(&self, y: &[f64]) -> f64 {
        let d = y.len() as f64;
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let w = 1.0 + self.l * r2;
        self.rho(y) * (-2.0 * self.nu * self.l * d / w + 4.0 * self.nu * (self.nu + 1.0) * self.l * self.l * r2 / (w * w))
    }

    pub fn weighted_sup(&self, grid: &Grid, u: &[f64]) -> f64 {
        grid.nodes_iter().zip(u).fold(0.0f64, |m, (y, v)| m.max((self.rho(&y) * v).abs()))
    }

    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        grid.sample(|y| self.rho(&y))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightCheck {
    pub nodes: usize,
    /// `max |∇ρ| / (ν√l ρ)`.
    pub max_grad_ratio: f64,
    /// `max |Δρ| / (2ν(2ν+d+2) l ρ)`.
    pub max_laplacian_ratio: f64,
    pub grad_pass: bool,
    pub laplacian_pass: bool,
}

/// Pointwise check of `|∇ρ| ≤ ν√l ρ` and `|Δρ| ≤ 2ν(2ν+d+2) l ρ` with the
/// analytic derivatives.
pub fn weight_derivative_check(weight: &WeightSpec, points: impl Iterator<Item = Vec<f64>>) -> WeightCheck {
    let (mut g, mut lap, mut nodes) = (0.0f64, 0.0f64, 0);
    for y in points {
        let d = y.len() as f64;
        let rho = weight.rho(&y);
        let gn = weight.grad(&y).iter().map(|v| v * v).sum::<f64>().sqrt();
        g = g.max(gn / (weight.nu * weight.l.sqrt() * rho));
        lap = lap.max(weight.laplacian(&y).abs() / (2.0 * weight.nu * (2.0 * weight.nu + d + 2.0) * weight.l * rho));
        nodes += 1;
    }
    WeightCheck {
        nodes,
        max_grad_ratio: g,
        max_laplacian_ratio: lap,
        grad_pass: g <= 1.0 + 1e-12,
        laplacian_pass: lap <= 1.0 + 1e-12,
    }
}

pub fn weight_derivative_check_grid(weight: &WeightSpec, grid: &Grid) -> WeightCheck {
    weight_derivative_check(weight, grid.nodes_iter().map(|y| y.to_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedReport {
    pub e1: EstimateReport,
    pub e2: EstimateReport,
}

/// Both sides of
/// `‖ρ(μ+Λ_n)^{-1}h‖_∞ ≤ K₁‖ρh‖_q` and `‖ρ(μ+Λ_n)^{-1}|b_m|h‖_∞ ≤ K₂‖|b_m|^{2/q}ρh‖_q`
/// over the operator family and `μ` list. Rows are ordered by `n`, then `μ`;
/// the pass flag compares the largest per-`n` ratio with the first one.
pub fn check_weighted_estimates(
    ops: &[(u32, &DiscreteOperator)],
    weight: &WeightSpec,
    h: &[f64],
    b_m: &FieldSpec,
    mus: &[f64],
    opts: &SolverOptions,
) -> Result<WeightedReport> {
    weight.validate(3)?;
    let grid = &ops.first().ok_or_else(|| Error::InvalidSpec("empty operator family".into()))?.1.grid;
    if ops.iter().any(|(_, op)| op.grid != *grid) || h.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let q = weight.q;
    let rho = weight.sample(grid);
    let bmag = b_m.magnitude_on(grid)?;
    let rho_h: Vec<f64> = rho.iter().zip(h).map(|(r, v)| r * v).collect();
    let bh: Vec<f64> = bmag.iter().zip(h).map(|(b, v)| b * v).collect();
    let rhs1 = lq_norm(grid, &rho_h, q);
    let rhs2_v: Vec<f64> = bmag.iter().zip(&rho_h).map(|(b, v)| b.powf(2.0 / q) * v).collect();
    let rhs2 = lq_norm(grid, &rhs2_v, q);
    let zero_input = h.iter().all(|v| *v == 0.0);

    let mut rows1 = Vec::new();
    let mut rows2 = Vec::new();
    for &(n, op) in ops {
        for &mu in mus {
            let u1 = solve_resolvent(op, mu, h, opts)?.u;
            let u2 = solve_resolvent(op, mu, &bh, opts)?.u;
            rows1.push((n, mu, weight.weighted_sup(grid, &u1), rhs1));
            rows2.push((n, mu, weight.weighted_sup(grid, &u2), rhs2));
        }
    }
    let build = |id: &str, rows: &[(u32, f64, f64, f64)]| {
        let ratio: Vec<f64> = rows.iter().map(|r| if r.3 > 0.0 { r.2 / r.3 } else { 0.0 }).collect();
        let first_n = rows[0].0;
        let sup_for = |n: u32| rows.iter().zip(&ratio).filter(|(r, _)| r.0 == n).map(|(_, v)| *v).fold(0.0, f64::max);
        let base = sup_for(first_n);
        let worst = ops.iter().map(|(n, _)| sup_for(*n)).fold(0.0, f64::max);
        EstimateReport {
            estimate_id: id.into(),
            mu_list: rows.iter().map(|r| r.1).collect(),
            n_list: rows.iter().map(|r| r.0).collect(),
            lhs: rows.iter().map(|r| r.2).collect(),
            rhs: rows.iter().map(|r| r.3).collect(),
            ratio,
            fitted: vec![
                Fitted { name: "ratio_first_n".into(), value: base, expected: None },
                Fitted { name: "ratio_max".into(), value: worst, expected: None },
            ],
            pass: zero_input || worst <= 2.0 * base,
            zero_input,
        }
    };
    Ok(WeightedReport { e1: build("e1", &rows1), e2: build("e2", &rows2) })
}

/// Unweighted analogues on one operator: `‖(μ+Λ)^{-1}|b_m|h‖_∞ ≤ C₁‖|b_m|^{2/q}h‖_q`
/// over the field family (`j2`) and the same with `|b_m - b_n|` over consecutive
/// pairs (`rem_j3`). Pass flags use the same bounded-growth rule as the weighted check.
pub fn check_unweighted_estimates(
    op: &DiscreteOperator,
    h: &[f64],
    fields: &[(u32, &FieldSpec)],
    q: f64,
    mus: &[f64],
    opts: &SolverOptions,
) -> Result<(EstimateReport, EstimateReport)> {
    let grid = &op.grid;
    if h.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let samples: Vec<(u32, Vec<f64>)> =
        fields.iter().map(|(m, b)| Ok((*m, b.sample_on(grid)?.data))).collect::<Result<_>>()?;
    let mag = |v: &[f64]| -> Vec<f64> { v.chunks_exact(3).map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()).collect() };
    let diff = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x - y).collect() };
    let zero_input = h.iter().all(|v| *v == 0.0);
    let sweep = |id: &str, weights: Vec<(u32, Vec<f64>)>| -> Result<EstimateReport> {
        let mut rows = Vec::new();
        for (m, w) in &weights {
            let bh: Vec<f64> = w.iter().zip(h).map(|(b, v)| b * v).collect();
            let rv: Vec<f64> = w.iter().zip(h).map(|(b, v)| b.powf(2.0 / q) * v).collect();
            let rhs = lq_norm(grid, &rv, q);
            for &mu in mus {
                let u = solve_resolvent(op, mu, &bh, opts)?.u;
                rows.push((*m, mu, crate::grid::sup_norm(&u), rhs));
            }
        }
        let ratio: Vec<f64> = rows.iter().map(|r| if r.3 > 0.0 { r.2 / r.3 } else { 0.0 }).collect();
        let first = rows.first().map_or(0, |r| r.0);
        let base = rows.iter().zip(&ratio).filter(|(r, _)| r.0 == first).map(|(_, v)| *v).fold(0.0, f64::max);
        let worst = ratio.iter().copied().fold(0.0, f64::max);
        Ok(EstimateReport {
            estimate_id: id.into(),
            mu_list: rows.iter().map(|r| r.1).collect(),
            n_list: rows.iter().map(|r| r.0).collect(),
            lhs: rows.iter().map(|r| r.2).collect(),
            rhs: rows.iter().map(|r| r.3).collect(),
            ratio,
            fitted: vec![
                Fitted { name: "ratio_first".into(), value: base, expected: None },
                Fitted { name: "ratio_max".into(), value: worst, expected: None },
            ],
            pass: zero_input || worst <= 2.0 * base,
            zero_input,
        })
    };
    let j2 = sweep("j2", samples.iter().map(|(m, v)| (*m, mag(v))).collect())?;
    let rem = sweep("rem_j3", samples.windows(2).map(|w| (w[1].0, mag(&diff(&w[1].1, &w[0].1)))).collect())?;
    Ok((j2, rem))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_bound_is_attained_at_unit_scaled_radius() {
        let w = WeightSpec { l: 0.01, nu: 2.0, q: 2.5 };
        let y = [10.0, 0.0, 0.0];
        let g = w.grad(&y);
        let ratio = g[0].abs() / w.rho(&y);
        assert!((ratio - 2.0 * 0.1).abs() < 1e-15);
        assert_eq!(w.grad(&[0.0; 3]), vec![0.0; 3]);
    }

    #[test]
    fn weight_floor_is_enforced() {
        assert!(WeightSpec { l: 0.01, nu: 1.5, q: 2.0 }.validate(3).is_err());
        assert!(WeightSpec { l: 0.0, nu: 3.0, q: 2.0 }.validate(3).is_err());
        assert!(WeightSpec { l: 0.01, nu: 2.0, q: 2.0 }.validate(3).is_ok());
    }

    #[test]
    fn power_law_fit_recovers_exponent_and_shift() {
        let mus = [5.0, 10.0, 40.0, 160.0, 640.0];
        let y: Vec<f64> = mus.iter().map(|m| 3.0 * (m - 1.5f64).powf(-0.5)).collect();
        let (mu0, fits) = fit_power_laws(&mus, &[&y], 0.0).unwrap();
        assert!((mu0 - 1.5).abs() < 0.02);
        assert!((fits[0].0 + 0.5).abs() < 1e-3);
    }

    #[test]
    fn short_mu_span_is_ill_conditioned() {
        let y = [1.0, 0.9, 0.8];
        assert!(matches!(fit_power_laws(&[10.0, 20.0, 30.0], &[&y], 0.0), Err(Error::FitIllConditioned(_))));
    }
}
