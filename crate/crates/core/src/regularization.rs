//! Approximation sequences `b_n = e^{ε_nΔ}(1_n b)`, `a_n = I + e^{ε_nΔ}(η_n(a-I))`
//! and `σ_n = I + e^{ε_nΔ}(η_n(σ-I))`.
//!
//! Two realizations of the heat semigroup are provided. [`mollify_field`] and
//! [`mollify_dispersion`] convolve node samples with a separable discrete
//! Gaussian of variance `2ε` per axis truncated at six standard deviations,
//! normalized so that constants are reproduced exactly. For radial families
//! in three dimensions ([`mollify_radial_field`], [`mollify_radial_dispersion`])
//! the convolution reduces to one-dimensional integrals that are tabulated
//! once and evaluated anywhere in space, which is what the path simulator uses.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    estimate_form_bound, ClassKind, DispersionKind, DispersionSpec, FieldKind, FieldRealization, FieldSpec,
    MatrixRealization, MatrixTarget,
};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{gauss_legendre, integrate};
use crate::sampled::{GridSamples, RadialTable, RadialTensorProfile, RadialVectorProfile};

/// Gaussian truncation in standard deviations.
pub const TRUNCATION_SIGMAS: f64 = 6.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum EpsRule {
    /// `ε_n = scale · n^{-power}`.
    Power { power: f64, scale: f64 },
}

impl Default for EpsRule {
    fn default() -> Self {
        EpsRule::Power { power: 2.0, scale: 1.0 }
    }
}

impl EpsRule {
    pub fn inverse_square() -> Self {
        Self::default()
    }

    pub fn inverse_cube() -> Self {
        EpsRule::Power { power: 3.0, scale: 1.0 }
    }

    pub fn eps(&self, n: u32) -> f64 {
        match self {
            EpsRule::Power { power, scale } => scale * (n as f64).powf(-power),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EpsRule::Power { power, scale } if *power > 0.0 && *scale > 0.0 => Ok(()),
            _ => Err(Error::InvalidSpec("eps rule needs positive power and scale".into())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MollificationSchedule {
    pub n: u32,
    pub eps: f64,
}

impl MollificationSchedule {
    pub fn new(n: u32, rule: &EpsRule) -> Result<Self> {
        rule.validate()?;
        if n == 0 {
            return Err(Error::InvalidSpec("schedule index n must be >= 1".into()));
        }
        Ok(Self { n, eps: rule.eps(n) })
    }

    /// Schedules for increasing `ns`; rejects lists along which `ε_n` does not decrease.
    pub fn list(ns: &[u32], rule: &EpsRule) -> Result<Vec<Self>> {
        let s: Vec<Self> = ns.iter().map(|&n| Self::new(n, rule)).collect::<Result<_>>()?;
        if s.windows(2).any(|w| w[1].eps >= w[0].eps) {
            return Err(Error::InvalidSpec("eps_n must decrease strictly along the schedule".into()));
        }
        Ok(s)
    }

    /// Radius past which the truncated Gaussian vanishes.
    pub fn kernel_radius(&self) -> f64 {
        TRUNCATION_SIGMAS * (2.0 * self.eps).sqrt()
    }
}

/// `η_n(r)`: 1 below `n`, `n + 1 - r` on `[n, n+1]`, 0 beyond.
pub fn eta(n: u32, r: f64) -> f64 {
    let n = n as f64;
    if r < n {
        1.0
    } else if r <= n + 1.0 {
        n + 1.0 - r
    } else {
        0.0
    }
}

pub fn cutoff_eta(n: u32, points: &[Vec<f64>]) -> Vec<f64> {
    points.iter().map(|p| eta(n, p.iter().map(|v| v * v).sum::<f64>().sqrt())).collect()
}

/// Normalized discrete Gaussian weights for `e^{εΔ}` on spacing `h`.
pub fn gaussian_weights(eps: f64, h: f64) -> Vec<f64> {
    let k = (TRUNCATION_SIGMAS * (2.0 * eps).sqrt() / h).ceil() as usize;
    let w: Vec<f64> = (0..=2 * k)
        .map(|i| {
            let x = (i as f64 - k as f64) * h;
            (-x * x / (4.0 * eps)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable convolution of a `comps`-component node-major array on an
/// `m³` lattice, with zero values outside.
fn convolve3(data: &mut [f64], m: usize, comps: usize, w: &[f64]) {
    let k = (w.len() / 2) as isize;
    let strides = [m * m * comps, m * comps, comps];
    let mut line = vec![0.0; m];
    let mut out = vec![0.0; m];
    for &stride in &strides {
        let others: Vec<usize> = strides.iter().copied().filter(|&s| s != stride).collect();
        for p in 0..m {
            for q in 0..m {
                for c in 0..comps {
                    let start = p * others[0] + q * others[1] + c;
                    for (i, l) in line.iter_mut().enumerate() {
                        *l = data[start + i * stride];
                    }
                    for (i, o) in out.iter_mut().enumerate() {
                        let lo = (i as isize - k).max(0) as usize;
                        let hi = ((i as isize + k) as usize).min(m - 1);
                        let mut s = 0.0;
                        for j in lo..=hi {
                            s += w[(j as isize - i as isize + k) as usize] * line[j];
                        }
                        *o = s;
                    }
                    for (i, o) in out.iter().enumerate() {
                        data[start + i * stride] = *o;
                    }
                }
            }
        }
    }
}

fn check_resolved(grid: &Grid, s: &MollificationSchedule) -> Result<()> {
    let h = grid.spacing();
    if h * h > s.eps * (1.0 + 1e-12) {
        return Err(Error::UnderResolved { h, eps: s.eps });
    }
    Ok(())
}

/// The target grid extended by whole cells on every side so that the kernel
/// never reaches past the data.
fn padded(grid: &Grid, s: &MollificationSchedule) -> Result<(Grid, usize)> {
    let h = grid.spacing();
    let pad = (s.kernel_radius() / h).ceil() as usize;
    Ok((Grid::new(grid.extent + pad as f64 * h, grid.nodes + 2 * pad)?, pad))
}

fn crop(data: &[f64], big: usize, pad: usize, comps: usize, grid: &Grid) -> Vec<f64> {
    let m = grid.nodes;
    let mut out = vec![0.0; grid.len() * comps];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let src = (((i + pad) * big + j + pad) * big + k + pad) * comps;
                let dst = grid.index(i, j, k) * comps;
                out[dst..dst + comps].copy_from_slice(&data[src..src + comps]);
            }
        }
    }
    out
}

/// Half-width a grid-sampled base must cover for the target grid.
fn require_extent(base_extent: f64, grid: &Grid, s: &MollificationSchedule) -> Result<()> {
    let needed = grid.extent + s.kernel_radius();
    if base_extent < needed {
        return Err(Error::ExtentTooSmall { needed, available: base_extent });
    }
    Ok(())
}

fn grid_base_extent(f: &FieldSpec) -> Option<f64> {
    match &f.kind {
        FieldKind::GridSampled { samples: Some(s), .. } => Some(s.grid.extent),
        FieldKind::Sum { children } => children.iter().filter_map(grid_base_extent).reduce(f64::min),
        FieldKind::Scaled { child, .. } => grid_base_extent(child),
        _ => None,
    }
}

/// `b_n = e^{εΔ}(1_n b)` sampled on `grid`. Nodes where `b` is undefined or
/// `|b| > n` or `|x| > n` are dropped by the indicator.
pub fn mollify_field(base: &FieldSpec, schedule: &MollificationSchedule, grid: &Grid) -> Result<FieldSpec> {
    if base.d != 3 {
        return Err(Error::InvalidDimension(base.d));
    }
    check_resolved(grid, schedule)?;
    if let Some(ext) = grid_base_extent(base) {
        require_extent(ext, grid, schedule)?;
    }
    let (big, pad) = padded(grid, schedule)?;
    let n = schedule.n as f64;
    let mut data = vec![0.0; big.len() * 3];
    for (idx, chunk) in data.chunks_exact_mut(3).enumerate() {
        let x = big.node(idx);
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() > n {
            continue;
        }
        let mut v = [0.0; 3];
        match base.eval_into(&x, &mut v) {
            Ok(()) => {}
            Err(Error::SingularPoint { .. }) => continue,
            Err(Error::OutsideGrid(_)) => continue,
            Err(e) => return Err(e),
        }
        if v.iter().map(|c| c * c).sum::<f64>().sqrt() <= n {
            chunk.copy_from_slice(&v);
        }
    }
    convolve3(&mut data, big.nodes, 3, &gaussian_weights(schedule.eps, grid.spacing()));
    let samples = GridSamples::new(grid.clone(), 3, crop(&data, big.nodes, pad, 3, grid))?.with_exterior(vec![0.0; 3]);
    Ok(FieldSpec {
        d: 3,
        kind: FieldKind::Mollified {
            base: Box::new(base.clone()),
            n: schedule.n,
            eps: schedule.eps,
            realization: Some(Arc::new(FieldRealization::Grid(samples))),
        },
    })
}

/// `I + e^{εΔ}(η_n(T - I))` with `T = a` or `T = σ`, sampled on `grid`.
pub fn mollify_dispersion(
    base: &DispersionSpec,
    schedule: &MollificationSchedule,
    grid: &Grid,
    target: MatrixTarget,
) -> Result<DispersionSpec> {
    if base.d != 3 {
        return Err(Error::InvalidDimension(base.d));
    }
    check_resolved(grid, schedule)?;
    if let DispersionKind::GridSampled { samples: Some(s), .. } = &base.kind {
        require_extent(s.grid.extent, grid, schedule)?;
    }
    let (big, pad) = padded(grid, schedule)?;
    let mut data = vec![0.0; big.len() * 9];
    if !base.is_constant() || base.rescale != 1.0 {
        for (idx, chunk) in data.chunks_exact_mut(9).enumerate() {
            let x = big.node(idx);
            let w = eta(schedule.n, x.iter().map(|v| v * v).sum::<f64>().sqrt());
            if w == 0.0 {
                continue;
            }
            let mut t = [0.0; 9];
            let res = match target {
                MatrixTarget::A => base.a_into(&x, &mut t),
                MatrixTarget::Sigma => base.sigma_into(&x, &mut t),
            };
            match res {
                Ok(()) => {}
                Err(Error::SingularPoint { .. }) => return Err(Error::SingularOnGrid { node: x }),
                Err(Error::OutsideGrid(_)) => continue,
                Err(e) => return Err(e),
            }
            for i in 0..3 {
                t[i * 3 + i] -= 1.0;
            }
            for (c, v) in chunk.iter_mut().zip(&t) {
                *c = w * v;
            }
        }
        convolve3(&mut data, big.nodes, 9, &gaussian_weights(schedule.eps, grid.spacing()));
    }
    let samples = GridSamples::new(grid.clone(), 9, crop(&data, big.nodes, pad, 9, grid))?.with_exterior(vec![0.0; 9]);
    Ok(DispersionSpec {
        d: 3,
        kind: DispersionKind::Mollified {
            base: Box::new(base.clone()),
            n: schedule.n,
            eps: schedule.eps,
            target,
            realization: Some(Arc::new(MatrixRealization::Grid(samples))),
        },
        rescale: 1.0,
    })
}

/// Moments `∫_{-1}^{1} u^k e^{-α(1-u)} du` for `k = 0, 1, 2`.
fn angular_moments(alpha: f64, rule: &(Vec<f64>, Vec<f64>)) -> [f64; 3] {
    if alpha >= 1.0 {
        let e2 = (-2.0 * alpha).exp();
        let i0 = (1.0 - e2) / alpha;
        let j1 = (1.0 - e2 * (1.0 + 2.0 * alpha)) / (alpha * alpha);
        let j2 = (2.0 - e2 * (2.0 + 4.0 * alpha + 4.0 * alpha * alpha)) / (alpha * alpha * alpha);
        [i0, i0 - j1, i0 - 2.0 * j1 + j2]
    } else {
        let mut m = [0.0; 3];
        for (u, w) in rule.0.iter().zip(&rule.1) {
            let e = w * (-alpha * (1.0 - u)).exp();
            m[0] += e;
            m[1] += e * u;
            m[2] += e * u * u;
        }
        m
    }
}

/// Radial density of a field or tensor, nonzero on `[lo, hi]`, smooth between `kinks`.
struct RadialDensity<'a> {
    f: &'a dyn Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    kinks: Vec<f64>,
}

/// `∫ ψ(s) s² 2π C e^{-(r-s)²/(4ε)} I_k(rs/(2ε)) ds` with `C = (4πε)^{-3/2}`.
fn radial_integral(dens: &RadialDensity, r: f64, eps: f64, k: usize, gl8: &(Vec<f64>, Vec<f64>), gl12: &(Vec<f64>, Vec<f64>)) -> f64 {
    let se = eps.sqrt();
    let a = dens.lo.max(r - 12.0 * se);
    let b = dens.hi.min(r + 12.0 * se);
    if b <= a {
        return 0.0;
    }
    let c = 2.0 * std::f64::consts::PI * (4.0 * std::f64::consts::PI * eps).powf(-1.5);
    let mut cuts = vec![a];
    cuts.extend(dens.kinks.iter().copied().filter(|&t| t > a && t < b));
    cuts.push(b);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let panels = ((w[1] - w[0]) / (0.5 * se)).ceil().max(1.0) as usize;
        total += integrate(
            |s| {
                let m = angular_moments(r * s / (2.0 * eps), gl12);
                (dens.f)(s) * s * s * c * (-(r - s).powi(2) / (4.0 * eps)).exp() * m[k]
            },
            w[0],
            w[1],
            panels,
            gl8,
        );
    }
    total
}

fn table(values: Vec<f64>, dr: f64, parity: f64) -> RadialTable {
    RadialTable { dr, values, tail: 0.0, parity }
}

fn tabulation(hi: f64, eps: f64) -> (f64, usize) {
    let dr = eps.sqrt() / 16.0;
    let r_max = hi + 12.0 * eps.sqrt();
    (dr, (r_max / dr).ceil() as usize + 1)
}

/// Exact `e^{εΔ}(1_n b)` for a three-dimensional Hardy field (or zero field),
/// tabulated in `|x|`.
pub fn mollify_radial_field(base: &FieldSpec, schedule: &MollificationSchedule) -> Result<FieldSpec> {
    if base.d != 3 {
        return Err(Error::InvalidDimension(base.d));
    }
    let (kappa, sign) = match &base.kind {
        FieldKind::Hardy { kappa, sign } => (*kappa, *sign),
        FieldKind::Zero => (0.0, 1.0),
        _ => return Err(Error::UnsupportedAnalytic("radial mollification needs a hardy or zero field".into())),
    };
    let n = schedule.n as f64;
    let eps = schedule.eps;
    // 1_n keeps κ/n ≤ |x| ≤ n.
    let lo = kappa / n;
    let f = move |s: f64| sign * kappa / s;
    let dens = RadialDensity { f: &f, lo, hi: n, kinks: vec![] };
    let (gl8, gl12) = (gauss_legendre(8), gauss_legendre(12));
    let (dr, len) = tabulation(n, eps);
    let values: Vec<f64> = if kappa == 0.0 || lo >= n {
        vec![0.0; len]
    } else {
        (0..len).map(|i| radial_integral(&dens, i as f64 * dr, eps, 1, &gl8, &gl12)).collect()
    };
    Ok(FieldSpec {
        d: 3,
        kind: FieldKind::Mollified {
            base: Box::new(base.clone()),
            n: schedule.n,
            eps,
            realization: Some(Arc::new(FieldRealization::Radial(RadialVectorProfile { g: table(values, dr, -1.0) }))),
        },
    })
}

/// Exact `I + e^{εΔ}(η_n(T - I))` for a three-dimensional radial projection
/// (or identity) dispersion, tabulated in `|x|`.
pub fn mollify_radial_dispersion(
    base: &DispersionSpec,
    schedule: &MollificationSchedule,
    target: MatrixTarget,
) -> Result<DispersionSpec> {
    if base.d != 3 {
        return Err(Error::InvalidDimension(base.d));
    }
    let c = match &base.kind {
        DispersionKind::RadialProjection { c } => *c,
        DispersionKind::Identity => 0.0,
        _ => return Err(Error::UnsupportedAnalytic("radial mollification needs radial_projection or identity".into())),
    };
    let rho = base.rescale;
    // T - I = iso·I + proj·x̂x̂ᵀ.
    let (iso, proj) = match target {
        MatrixTarget::A => (rho - 1.0, rho * c),
        MatrixTarget::Sigma => (rho.sqrt() - 1.0, rho.sqrt() * ((1.0 + c).sqrt() - 1.0)),
    };
    let n = schedule.n;
    let eps = schedule.eps;
    let (gl8, gl12) = (gauss_legendre(8), gauss_legendre(12));
    let (dr, len) = tabulation(n as f64 + 1.0, eps);
    let fi = move |s: f64| iso * eta(n, s);
    let fp = move |s: f64| proj * eta(n, s);
    let kinks = vec![n as f64];
    let di = RadialDensity { f: &fi, lo: 0.0, hi: n as f64 + 1.0, kinks: kinks.clone() };
    let dp = RadialDensity { f: &fp, lo: 0.0, hi: n as f64 + 1.0, kinks };
    let mut a_vals = vec![0.0; len];
    let mut b_vals = vec![0.0; len];
    for i in 0..len {
        let r = i as f64 * dr;
        let mut a = 0.0;
        let mut b = 0.0;
        if iso != 0.0 {
            a += radial_integral(&di, r, eps, 0, &gl8, &gl12);
        }
        if proj != 0.0 {
            let k0 = radial_integral(&dp, r, eps, 0, &gl8, &gl12);
            let kzz = radial_integral(&dp, r, eps, 2, &gl8, &gl12);
            a += 0.5 * (k0 - kzz);
            b += 0.5 * (3.0 * kzz - k0);
        }
        a_vals[i] = a;
        b_vals[i] = b;
    }
    Ok(DispersionSpec {
        d: 3,
        kind: DispersionKind::Mollified {
            base: Box::new(base.clone()),
            n,
            eps,
            target,
            realization: Some(Arc::new(MatrixRealization::Radial(RadialTensorProfile {
                iso: table(a_vals, dr, 1.0),
                proj: table(b_vals, dr, 1.0),
            }))),
        },
        rescale: 1.0,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreservationRow {
    pub n: u32,
    pub eps: f64,
    pub delta_est: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreservationTable {
    pub lambda: f64,
    pub delta_base: f64,
    pub rows: Vec<PreservationRow>,
}

/// `δ_est(b_n)` along a schedule next to `δ_est(b)` on the same grid.
pub fn verify_bound_preservation(
    base: &FieldSpec,
    ns: &[u32],
    rule: &EpsRule,
    lambda: f64,
    grid: &Grid,
) -> Result<PreservationTable> {
    let delta_base = estimate_form_bound(base, ClassKind::FDelta, lambda, grid)?.delta;
    let mut rows = Vec::new();
    for s in MollificationSchedule::list(ns, rule)? {
        let bn = mollify_field(base, &s, grid)?;
        let delta_est = estimate_form_bound(&bn, ClassKind::FDelta, lambda, grid)?.delta;
        let ratio = if delta_base > 0.0 { delta_est / delta_base } else { 0.0 };
        rows.push(PreservationRow { n: s.n, eps: s.eps, delta_est, ratio });
    }
    Ok(PreservationTable { lambda, delta_base, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_is_piecewise_linear() {
        assert_eq!(eta(5, 3.0), 1.0);
        assert_eq!(eta(5, 5.5), 0.5);
        assert_eq!(eta(5, 7.0), 0.0);
        assert_eq!(cutoff_eta(5, &[vec![0.0, 5.5, 0.0]]), vec![0.5]);
    }

    #[test]
    fn schedules_must_decrease() {
        let r = EpsRule::inverse_square();
        assert!(MollificationSchedule::list(&[4, 8, 16], &r).is_ok());
        assert!(MollificationSchedule::list(&[8, 4], &r).is_err());
        assert!((MollificationSchedule::new(8, &EpsRule::inverse_cube()).unwrap().eps - 1.0 / 512.0).abs() < 1e-18);
    }

    #[test]
    fn moments_agree_across_branches() {
        let gl = gauss_legendre(12);
        let gl_fine = gauss_legendre(40);
        for alpha in [1.0, 1.5, 3.0] {
            let closed = angular_moments(alpha, &gl);
            let mut quad = [0.0; 3];
            for (u, w) in gl_fine.0.iter().zip(&gl_fine.1) {
                let e = w * (-alpha * (1.0 - u)).exp();
                quad[0] += e;
                quad[1] += e * u;
                quad[2] += e * u * u;
            }
            for k in 0..3 {
                assert!((closed[k] - quad[k]).abs() < 1e-12, "alpha {alpha} k {k}");
            }
        }
    }

    #[test]
    fn under_resolved_grid_is_refused() {
        let g = Grid::new(1.0, 8).unwrap();
        let s = MollificationSchedule::new(16, &EpsRule::inverse_square()).unwrap();
        let b = FieldSpec::hardy(3, 0.1, 1.0).unwrap();
        assert!(matches!(mollify_field(&b, &s, &g), Err(Error::UnderResolved { .. })));
    }
}
