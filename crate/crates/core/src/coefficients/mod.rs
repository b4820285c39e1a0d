//! Drift and dispersion coefficient families, their evaluation, derived
//! fields and relative form bounds.
//!
//! Drifts are [`FieldSpec`]s: Hardy fields `±κ x/|x|²`, bounded box fields,
//! grid samples, sums, scalings, mollified realizations and the analytic
//! derived fields `∇a` and the Stratonovich correction. Dispersions are
//! [`DispersionSpec`]s; every kind exposes both `σ` and `a = σσᵀ`, normalized
//! so that `a ≥ I`.

mod bounds;
mod derived;

pub use bounds::{
    analytic_hardy_delta, combine_fields, estimate_form_bound, ClassKind, FormBoundEstimate, Method,
    POWER_MAX_ITER, POWER_REL_TOL,
};
pub use derived::{divergence_of_a, fd_divergence_samples, fd_stratonovich_samples, DerivativeMode};

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sampled::{GridSamples, RadialTensorProfile, RadialVectorProfile};

/// Largest supported dimension; evaluation uses fixed stack buffers of this size.
pub const MAX_DIM: usize = 8;

/// Points closer than this to a singular point are rejected.
pub const SINGULAR_TOL: f64 = 1e-12;

fn one() -> f64 {
    1.0
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn check_dim(d: usize) -> Result<()> {
    if d < 3 || d > MAX_DIM {
        return Err(Error::InvalidDimension(d));
    }
    Ok(())
}

fn check_point(d: usize, x: &[f64]) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    Ok(())
}

fn reject_singular(x: &[f64], singular: &[Vec<f64>]) -> Result<()> {
    for p in singular {
        let dist = x.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist <= SINGULAR_TOL {
            return Err(Error::SingularPoint { point: x.to_vec(), tol: SINGULAR_TOL });
        }
    }
    Ok(())
}

/// Realized data of a mollified drift.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldRealization {
    Grid(GridSamples),
    Radial(RadialVectorProfile),
}

/// Realized data of a mollified matrix: the smoothed `η_n (T - I)`.
#[derive(Clone, Debug, PartialEq)]
pub enum MatrixRealization {
    /// `d*d` components, row-major.
    Grid(GridSamples),
    Radial(RadialTensorProfile),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub d: usize,
    #[serde(flatten)]
    pub kind: FieldKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    Zero,
    /// `sign · κ x/|x|²`.
    Hardy {
        kappa: f64,
        #[serde(default = "one")]
        sign: f64,
    },
    /// `M · e` on the cube `|x|_∞ ≤ half_width` (everywhere when absent), zero
    /// outside. `e` defaults to the first unit vector.
    BoundedBox {
        m: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
        #[serde(default)]
        half_width: Option<f64>,
    },
    GridSampled {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(skip)]
        samples: Option<Arc<GridSamples>>,
    },
    Sum {
        children: Vec<FieldSpec>,
    },
    Scaled {
        factor: f64,
        child: Box<FieldSpec>,
    },
    /// `e^{εΔ}(1_n b)`; evaluation needs a realization from the regularization module.
    Mollified {
        base: Box<FieldSpec>,
        n: u32,
        eps: f64,
        #[serde(skip)]
        realization: Option<Arc<FieldRealization>>,
    },
    /// `(∇a)^k = Σ_i ∂_i a_ik` of an analytic dispersion.
    Divergence {
        dispersion: Box<DispersionSpec>,
    },
    /// `c^i = (1/√2) Σ_{r,j} (∂_r σ_ij) σ_rj` of an analytic dispersion.
    StratonovichCorrection {
        dispersion: Box<DispersionSpec>,
    },
}

impl FieldSpec {
    pub fn zero(d: usize) -> Self {
        Self { d, kind: FieldKind::Zero }
    }

    pub fn hardy(d: usize, kappa: f64, sign: f64) -> Result<Self> {
        check_dim(d)?;
        if !(kappa >= 0.0) {
            return Err(Error::InvalidSpec(format!("hardy kappa must be >= 0, got {kappa}")));
        }
        if sign != 1.0 && sign != -1.0 {
            return Err(Error::InvalidSpec(format!("hardy sign must be +1 or -1, got {sign}")));
        }
        Ok(Self { d, kind: FieldKind::Hardy { kappa, sign } })
    }

    pub fn bounded_box(d: usize, m: f64, direction: Option<Vec<f64>>, half_width: Option<f64>) -> Result<Self> {
        let f = Self { d, kind: FieldKind::BoundedBox { m, direction, half_width } };
        f.validate()?;
        Ok(f)
    }

    pub fn constant(v: &[f64]) -> Result<Self> {
        let m = norm(v);
        let direction = if m > 0.0 { Some(v.iter().map(|x| x / m).collect()) } else { None };
        Self::bounded_box(v.len(), m, direction, None)
    }

    pub fn grid_sampled(samples: GridSamples) -> Result<Self> {
        if samples.comps != 3 {
            return Err(Error::DimensionMismatch { expected: 3, got: samples.comps });
        }
        Ok(Self { d: 3, kind: FieldKind::GridSampled { path: None, samples: Some(Arc::new(samples)) } })
    }

    pub fn sum(children: Vec<FieldSpec>) -> Result<Self> {
        let d = children.first().map(|c| c.d).ok_or_else(|| Error::InvalidSpec("empty sum".into()))?;
        let f = Self { d, kind: FieldKind::Sum { children } };
        f.validate()?;
        Ok(f)
    }

    pub fn scaled(factor: f64, child: FieldSpec) -> Self {
        Self { d: child.d, kind: FieldKind::Scaled { factor, child: Box::new(child) } }
    }

    /// Checks dimensions and parameter ranges recursively.
    pub fn validate(&self) -> Result<()> {
        check_dim(self.d)?;
        match &self.kind {
            FieldKind::Zero => Ok(()),
            FieldKind::Hardy { kappa, sign } => Self::hardy(self.d, *kappa, *sign).map(|_| ()),
            FieldKind::BoundedBox { m, direction, half_width } => {
                if !(m.is_finite() && *m >= 0.0) {
                    return Err(Error::InvalidSpec(format!("bounded_box m must be >= 0, got {m}")));
                }
                if let Some(e) = direction {
                    check_point(self.d, e)?;
                    if (norm(e) - 1.0).abs() > 1e-12 {
                        return Err(Error::InvalidSpec("bounded_box direction must be a unit vector".into()));
                    }
                }
                if let Some(w) = half_width {
                    if !(*w > 0.0) {
                        return Err(Error::InvalidSpec("bounded_box half_width must be positive".into()));
                    }
                }
                Ok(())
            }
            FieldKind::GridSampled { path, samples } => {
                if self.d != 3 {
                    return Err(Error::InvalidDimension(self.d));
                }
                if path.is_none() && samples.is_none() {
                    return Err(Error::Unrealized);
                }
                Ok(())
            }
            FieldKind::Sum { children } => {
                if children.is_empty() {
                    return Err(Error::InvalidSpec("empty sum".into()));
                }
                for c in children {
                    if c.d != self.d {
                        return Err(Error::DimensionMismatch { expected: self.d, got: c.d });
                    }
                    c.validate()?;
                }
                Ok(())
            }
            FieldKind::Scaled { factor, child } => {
                if !factor.is_finite() {
                    return Err(Error::InvalidSpec("non-finite scale factor".into()));
                }
                if child.d != self.d {
                    return Err(Error::DimensionMismatch { expected: self.d, got: child.d });
                }
                child.validate()
            }
            FieldKind::Mollified { base, n, eps, .. } => {
                if *n == 0 || !(*eps > 0.0) {
                    return Err(Error::InvalidSpec("mollified field needs n >= 1 and eps > 0".into()));
                }
                base.validate()
            }
            FieldKind::Divergence { dispersion } | FieldKind::StratonovichCorrection { dispersion } => {
                if dispersion.d != self.d {
                    return Err(Error::DimensionMismatch { expected: self.d, got: dispersion.d });
                }
                dispersion.validate()
            }
        }
    }

    /// Points where the field is undefined. Mollified fields are smooth.
    pub fn singular_points(&self) -> Vec<Vec<f64>> {
        let origin = || vec![vec![0.0; self.d]];
        let mut pts = match &self.kind {
            FieldKind::Hardy { kappa, .. } if *kappa > 0.0 => origin(),
            FieldKind::Sum { children } => children.iter().flat_map(|c| c.singular_points()).collect(),
            FieldKind::Scaled { child, .. } => child.singular_points(),
            FieldKind::Divergence { dispersion } | FieldKind::StratonovichCorrection { dispersion } => {
                dispersion.singular_points()
            }
            _ => vec![],
        };
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        pts.dedup();
        pts
    }

    /// Load grid data referenced by path (relative paths resolve against `base_dir`).
    pub fn load_data(&mut self, base_dir: &Path) -> Result<()> {
        match &mut self.kind {
            FieldKind::GridSampled { path: Some(p), samples } if samples.is_none() => {
                let full = if p.is_absolute() { p.clone() } else { base_dir.join(&*p) };
                let s = crate::io::read_grid_samples(&full)?;
                if s.comps != 3 {
                    return Err(Error::DimensionMismatch { expected: 3, got: s.comps });
                }
                *samples = Some(Arc::new(s));
                Ok(())
            }
            FieldKind::Sum { children } => children.iter_mut().try_for_each(|c| c.load_data(base_dir)),
            FieldKind::Scaled { child, .. } => child.load_data(base_dir),
            FieldKind::Mollified { base, .. } => base.load_data(base_dir),
            FieldKind::Divergence { dispersion } | FieldKind::StratonovichCorrection { dispersion } => {
                dispersion.load_data(base_dir)
            }
            _ => Ok(()),
        }
    }

    /// `b(x)` into `out`; rejects points at singular points.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_point(self.d, x)?;
        check_point(self.d, out)?;
        self.eval_unchecked(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// `|b(x)|`.
    pub fn magnitude(&self, x: &[f64]) -> Result<f64> {
        let mut buf = [0.0; MAX_DIM];
        self.eval_into(x, &mut buf[..self.d])?;
        Ok(norm(&buf[..self.d]))
    }

    fn eval_unchecked(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.d;
        match &self.kind {
            FieldKind::Zero => out.iter_mut().for_each(|o| *o = 0.0),
            FieldKind::Hardy { kappa, sign } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                if *kappa == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                if r2.sqrt() <= SINGULAR_TOL {
                    return Err(Error::SingularPoint { point: x.to_vec(), tol: SINGULAR_TOL });
                }
                let s = sign * kappa / r2;
                out.iter_mut().zip(x).for_each(|(o, v)| *o = s * v);
            }
            FieldKind::BoundedBox { m, direction, half_width } => {
                let inside = half_width.is_none_or(|w| x.iter().all(|v| v.abs() <= w));
                for (i, o) in out.iter_mut().enumerate() {
                    let e = direction.as_ref().map_or(if i == 0 { 1.0 } else { 0.0 }, |e| e[i]);
                    *o = if inside { m * e } else { 0.0 };
                }
            }
            FieldKind::GridSampled { samples, .. } => {
                let s = samples.as_ref().ok_or(Error::Unrealized)?;
                s.eval_into(&[x[0], x[1], x[2]], out)?;
            }
            FieldKind::Sum { children } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut buf = [0.0; MAX_DIM];
                for c in children {
                    c.eval_unchecked(x, &mut buf[..d])?;
                    out.iter_mut().zip(&buf[..d]).for_each(|(o, v)| *o += v);
                }
            }
            FieldKind::Scaled { factor, child } => {
                child.eval_unchecked(x, out)?;
                out.iter_mut().for_each(|o| *o *= factor);
            }
            FieldKind::Mollified { realization, .. } => match realization.as_deref() {
                Some(FieldRealization::Grid(s)) => s.eval_into(&[x[0], x[1], x[2]], out)?,
                Some(FieldRealization::Radial(p)) => p.eval_into(x, out),
                None => return Err(Error::Unrealized),
            },
            FieldKind::Divergence { dispersion } => dispersion.divergence_into(x, out)?,
            FieldKind::StratonovichCorrection { dispersion } => dispersion.stratonovich_into(x, out)?,
        }
        Ok(())
    }

    /// Evaluate at many points (the `eval_coefficients` operation for drifts).
    pub fn eval_points(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|p| self.eval(p)).collect()
    }

    /// Sample every component on the grid, refusing nodes at singular points.
    pub fn sample_on(&self, grid: &Grid) -> Result<GridSamples> {
        if self.d != 3 {
            return Err(Error::InvalidDimension(self.d));
        }
        let singular = self.singular_points();
        let mut data = vec![0.0; grid.len() * 3];
        for (idx, chunk) in data.chunks_exact_mut(3).enumerate() {
            let x = grid.node(idx);
            if reject_singular(&x, &singular).is_err() {
                return Err(Error::SingularOnGrid { node: x });
            }
            self.eval_unchecked(&x, chunk).map_err(|e| match e {
                Error::SingularPoint { .. } => Error::SingularOnGrid { node: x },
                other => other,
            })?;
        }
        GridSamples::new(grid.clone(), 3, data)
    }

    /// `|b|` at every node.
    pub fn magnitude_on(&self, grid: &Grid) -> Result<Vec<f64>> {
        let s = self.sample_on(grid)?;
        Ok(s.data.chunks_exact(3).map(norm).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixTarget {
    /// The realization smooths `η_n (a - I)`; `σ` is the symmetric root of `a`.
    A,
    /// The realization smooths `η_n (σ - I)`; `a = σσᵀ`.
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub d: usize,
    #[serde(flatten)]
    pub kind: DispersionKind,
    /// Factor `1/ν` applied to `a` (and `1/√ν` to `σ`) so that `a ≥ I`.
    #[serde(default = "one")]
    pub rescale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DispersionKind {
    Identity,
    /// `a = I + c x⊗x/|x|²`, `c > -1`.
    RadialProjection { c: f64 },
    /// `a = I + c sin²(log|x|) e⊗e`, `|e| = 1`.
    SineLog { c: f64, e: Vec<f64> },
    /// `a = I + Σ (a_i - I)`.
    Sum { children: Vec<DispersionSpec> },
    /// Node values of `σ` (9 components, row-major).
    GridSampled {
        #[serde(default)]
        path: Option<PathBuf>,
        #[serde(skip)]
        samples: Option<Arc<GridSamples>>,
    },
    Mollified {
        base: Box<DispersionSpec>,
        n: u32,
        eps: f64,
        target: MatrixTarget,
        #[serde(skip)]
        realization: Option<Arc<MatrixRealization>>,
    },
}

/// Symmetric square root of a symmetric positive definite `d×d` matrix.
pub fn sym_sqrt(a: &[f64], d: usize, out: &mut [f64]) {
    let m = DMatrix::from_row_slice(d, d, a);
    let eig = SymmetricEigen::new(m);
    let mut r = DMatrix::zeros(d, d);
    for k in 0..d {
        let v = eig.eigenvectors.column(k);
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        r += s * v * v.transpose();
    }
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = 0.5 * (r[(i, j)] + r[(j, i)]);
        }
    }
}

/// Smallest eigenvalue of a symmetric `d×d` matrix.
pub fn min_eigenvalue(a: &[f64], d: usize) -> f64 {
    let m = DMatrix::from_row_slice(d, d, a);
    SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

fn identity_into(d: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
}

fn rank_one_into(d: usize, coef: f64, u: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = coef * u[i] * u[j] + if i == j { 1.0 } else { 0.0 };
        }
    }
}

/// `out = m mᵀ` for row-major `d×d`.
pub fn gram_into(m: &[f64], d: usize, out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = (0..d).map(|k| m[i * d + k] * m[j * d + k]).sum();
        }
    }
}

impl DispersionSpec {
    pub fn identity(d: usize) -> Self {
        Self { d, kind: DispersionKind::Identity, rescale: 1.0 }
    }

    pub fn radial_projection(d: usize, c: f64) -> Result<Self> {
        Self { d, kind: DispersionKind::RadialProjection { c }, rescale: 1.0 }.normalized()
    }

    pub fn sine_log(d: usize, c: f64, e: Vec<f64>) -> Result<Self> {
        Self { d, kind: DispersionKind::SineLog { c, e }, rescale: 1.0 }.normalized()
    }

    pub fn sum(children: Vec<DispersionSpec>) -> Result<Self> {
        let d = children.first().map(|c| c.d).ok_or_else(|| Error::InvalidSpec("empty sum".into()))?;
        Self { d, kind: DispersionKind::Sum { children }, rescale: 1.0 }.normalized()
    }

    /// Grid-sampled `σ`; rescaled if `σσᵀ` dips below `I` anywhere.
    pub fn grid_sampled(samples: GridSamples) -> Result<Self> {
        if samples.comps != 9 {
            return Err(Error::DimensionMismatch { expected: 9, got: samples.comps });
        }
        Self { d: 3, kind: DispersionKind::GridSampled { path: None, samples: Some(Arc::new(samples)) }, rescale: 1.0 }
            .normalized()
    }

    /// Validates parameters and sets `rescale` so that `a ≥ I`.
    pub fn normalized(mut self) -> Result<Self> {
        self.validate()?;
        let nu = self.ellipticity_lower_bound()?;
        if nu <= 0.0 {
            return Err(Error::NonPsdMatrix { point: vec![], min_eig: nu });
        }
        self.rescale = if nu < 1.0 { 1.0 / nu } else { 1.0 };
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.d)?;
        if !(self.rescale >= 1.0 && self.rescale.is_finite()) {
            return Err(Error::InvalidSpec(format!("rescale must be >= 1, got {}", self.rescale)));
        }
        match &self.kind {
            DispersionKind::Identity => Ok(()),
            DispersionKind::RadialProjection { c } => {
                if !(*c > -1.0 && c.is_finite()) {
                    return Err(Error::InvalidSpec(format!("radial_projection needs c > -1, got {c}")));
                }
                Ok(())
            }
            DispersionKind::SineLog { c, e } => {
                if !(*c > -1.0 && c.is_finite()) {
                    return Err(Error::InvalidSpec(format!("sine_log needs c > -1, got {c}")));
                }
                check_point(self.d, e)?;
                if (norm(e) - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec("sine_log direction e must be a unit vector".into()));
                }
                Ok(())
            }
            DispersionKind::Sum { children } => {
                if children.is_empty() {
                    return Err(Error::InvalidSpec("empty sum".into()));
                }
                for c in children {
                    if c.d != self.d {
                        return Err(Error::DimensionMismatch { expected: self.d, got: c.d });
                    }
                    c.validate()?;
                }
                Ok(())
            }
            DispersionKind::GridSampled { path, samples } => {
                if self.d != 3 {
                    return Err(Error::InvalidDimension(self.d));
                }
                if path.is_none() && samples.is_none() {
                    return Err(Error::Unrealized);
                }
                Ok(())
            }
            DispersionKind::Mollified { base, n, eps, .. } => {
                if *n == 0 || !(*eps > 0.0) {
                    return Err(Error::InvalidSpec("mollified dispersion needs n >= 1 and eps > 0".into()));
                }
                base.validate()
            }
        }
    }

    /// Lower bound on the smallest eigenvalue of the unscaled `a`.
    fn ellipticity_lower_bound(&self) -> Result<f64> {
        Ok(match &self.kind {
            DispersionKind::Identity | DispersionKind::Sum { .. } | DispersionKind::Mollified { .. } => 1.0,
            DispersionKind::RadialProjection { c } | DispersionKind::SineLog { c, .. } => (1.0 + c).min(1.0),
            DispersionKind::GridSampled { samples, .. } => match samples {
                Some(s) => {
                    let mut a = [0.0; 9];
                    let mut lo = f64::INFINITY;
                    for idx in 0..s.grid.len() {
                        gram_into(s.at_node(idx), 3, &mut a);
                        lo = lo.min(min_eigenvalue(&a, 3));
                    }
                    lo.min(1.0)
                }
                None => 1.0,
            },
        })
    }

    pub fn singular_points(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            DispersionKind::RadialProjection { c } | DispersionKind::SineLog { c, .. } if *c != 0.0 => {
                vec![vec![0.0; self.d]]
            }
            DispersionKind::Sum { children } => {
                let mut v: Vec<Vec<f64>> = children.iter().flat_map(|c| c.singular_points()).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                v.dedup();
                v
            }
            _ => vec![],
        }
    }

    pub fn load_data(&mut self, base_dir: &Path) -> Result<()> {
        match &mut self.kind {
            DispersionKind::GridSampled { path: Some(p), samples } if samples.is_none() => {
                let full = if p.is_absolute() { p.clone() } else { base_dir.join(&*p) };
                let s = crate::io::read_grid_samples(&full)?;
                if s.comps != 9 {
                    return Err(Error::DimensionMismatch { expected: 9, got: s.comps });
                }
                *samples = Some(Arc::new(s));
            }
            DispersionKind::Sum { children } => {
                children.iter_mut().try_for_each(|c| c.load_data(base_dir))?;
            }
            DispersionKind::Mollified { base, .. } => base.load_data(base_dir)?,
            _ => {}
        }
        // Deserialized specs skip the constructors, so normalize here too.
        let rescale = self.rescale;
        let normalized = self.clone().normalized()?;
        self.rescale = normalized.rescale.max(rescale);
        Ok(())
    }

    fn unit_radial(&self, x: &[f64]) -> Result<(f64, [f64; MAX_DIM])> {
        let r = norm(x);
        if r <= SINGULAR_TOL {
            return Err(Error::SingularPoint { point: x.to_vec(), tol: SINGULAR_TOL });
        }
        let mut u = [0.0; MAX_DIM];
        for (ui, xi) in u.iter_mut().zip(x) {
            *ui = xi / r;
        }
        Ok((r, u))
    }

    /// Unscaled `σ` and/or `a`.
    fn raw_into(&self, x: &[f64], sigma: Option<&mut [f64]>, a: Option<&mut [f64]>) -> Result<()> {
        let d = self.d;
        match &self.kind {
            DispersionKind::Identity => {
                if let Some(s) = sigma {
                    identity_into(d, s);
                }
                if let Some(a) = a {
                    identity_into(d, a);
                }
            }
            DispersionKind::RadialProjection { c } => {
                if *c == 0.0 {
                    return Self::identity(d).raw_into(x, sigma, a);
                }
                let (_, u) = self.unit_radial(x)?;
                if let Some(s) = sigma {
                    rank_one_into(d, (1.0 + c).sqrt() - 1.0, &u, s);
                }
                if let Some(a) = a {
                    rank_one_into(d, *c, &u, a);
                }
            }
            DispersionKind::SineLog { c, e } => {
                if *c == 0.0 {
                    return Self::identity(d).raw_into(x, sigma, a);
                }
                let (r, _) = self.unit_radial(x)?;
                let s2 = r.ln().sin().powi(2);
                if let Some(s) = sigma {
                    rank_one_into(d, (1.0 + c * s2).sqrt() - 1.0, e, s);
                }
                if let Some(a) = a {
                    rank_one_into(d, c * s2, e, a);
                }
            }
            DispersionKind::Sum { children } => {
                let mut acc = [0.0; MAX_DIM * MAX_DIM];
                let mut buf = [0.0; MAX_DIM * MAX_DIM];
                identity_into(d, &mut acc[..d * d]);
                for ch in children {
                    ch.a_into_unchecked(x, &mut buf[..d * d])?;
                    for i in 0..d {
                        buf[i * d + i] -= 1.0;
                    }
                    acc[..d * d].iter_mut().zip(&buf[..d * d]).for_each(|(p, q)| *p += q);
                }
                if let Some(s) = sigma {
                    sym_sqrt(&acc[..d * d], d, s);
                }
                if let Some(a) = a {
                    a.copy_from_slice(&acc[..d * d]);
                }
            }
            DispersionKind::GridSampled { samples, .. } => {
                let smp = samples.as_ref().ok_or(Error::Unrealized)?;
                let mut s9 = [0.0; 9];
                smp.eval_into(&[x[0], x[1], x[2]], &mut s9)?;
                if let Some(a) = a {
                    gram_into(&s9, 3, a);
                }
                if let Some(s) = sigma {
                    s.copy_from_slice(&s9);
                }
            }
            DispersionKind::Mollified { target, realization, .. } => {
                let mut mm = [0.0; MAX_DIM * MAX_DIM];
                let real = realization.as_deref().ok_or(Error::Unrealized)?;
                match real {
                    MatrixRealization::Grid(g) => {
                        g.eval_into(&[x[0], x[1], x[2]], &mut mm[..9])?;
                        for i in 0..3 {
                            mm[i * 3 + i] += 1.0;
                        }
                        match target {
                            MatrixTarget::A => {
                                if let Some(s) = sigma {
                                    sym_sqrt(&mm[..9], 3, s);
                                }
                                if let Some(a) = a {
                                    a.copy_from_slice(&mm[..9]);
                                }
                            }
                            MatrixTarget::Sigma => {
                                if let Some(a) = a {
                                    gram_into(&mm[..9], 3, a);
                                }
                                if let Some(s) = sigma {
                                    s.copy_from_slice(&mm[..9]);
                                }
                            }
                        }
                    }
                    MatrixRealization::Radial(p) => {
                        // M = A I + B x̂x̂ᵀ, so I + M = (1+A) I + B x̂x̂ᵀ.
                        let (ai, bp, u) = p.parts(x);
                        let base = 1.0 + ai;
                        let write = |out: &mut [f64], diag: f64, proj: f64| {
                            for i in 0..d {
                                for j in 0..d {
                                    out[i * d + j] = proj * u[i] * u[j] + if i == j { diag } else { 0.0 };
                                }
                            }
                        };
                        match target {
                            MatrixTarget::A => {
                                if let Some(s) = sigma {
                                    let s0 = base.max(0.0).sqrt();
                                    write(s, s0, (base + bp).max(0.0).sqrt() - s0);
                                }
                                if let Some(a) = a {
                                    write(a, base, bp);
                                }
                            }
                            MatrixTarget::Sigma => {
                                if let Some(a) = a {
                                    let a0 = base * base;
                                    write(a, a0, (base + bp).powi(2) - a0);
                                }
                                if let Some(s) = sigma {
                                    write(s, base, bp);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn a_into_unchecked(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.raw_into(x, None, Some(out))?;
        if self.rescale != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.rescale);
        }
        Ok(())
    }

    /// `a(x)`, row-major `d×d`.
    pub fn a_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_point(self.d, x)?;
        check_point(self.d * self.d, out)?;
        self.a_into_unchecked(x, out)
    }

    /// `σ(x)`, row-major `d×d`.
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_point(self.d, x)?;
        check_point(self.d * self.d, out)?;
        self.raw_into(x, Some(&mut *out), None)?;
        if self.rescale != 1.0 {
            let s = self.rescale.sqrt();
            out.iter_mut().for_each(|v| *v *= s);
        }
        Ok(())
    }

    /// `σ(x)` and `a(x)` in one evaluation.
    pub fn sigma_and_a_into(&self, x: &[f64], sigma: &mut [f64], a: &mut [f64]) -> Result<()> {
        check_point(self.d, x)?;
        self.raw_into(x, Some(&mut *sigma), Some(&mut *a))?;
        if self.rescale != 1.0 {
            let s = self.rescale.sqrt();
            sigma.iter_mut().for_each(|v| *v *= s);
            a.iter_mut().for_each(|v| *v *= self.rescale);
        }
        Ok(())
    }

    pub fn a(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d * self.d];
        self.a_into(x, &mut out)?;
        Ok(out)
    }

    pub fn sigma(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d * self.d];
        self.sigma_into(x, &mut out)?;
        Ok(out)
    }

    /// `a(x)` at many points (the `eval_coefficients` operation for matrices).
    pub fn eval_points(&self, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|p| self.a(p)).collect()
    }

    /// Whether `σ` is constant in space (then the Stratonovich correction vanishes).
    pub fn is_constant(&self) -> bool {
        match &self.kind {
            DispersionKind::Identity => true,
            DispersionKind::RadialProjection { c } | DispersionKind::SineLog { c, .. } => *c == 0.0,
            DispersionKind::Sum { children } => children.iter().all(DispersionSpec::is_constant),
            _ => false,
        }
    }

    /// Analytic `∇a`, rescaling included.
    pub fn divergence_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.analytic_vector(x, out, false)
    }

    /// Analytic Stratonovich correction, rescaling included.
    pub fn stratonovich_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.analytic_vector(x, out, true)
    }

    fn analytic_vector(&self, x: &[f64], out: &mut [f64], strat: bool) -> Result<()> {
        let d = self.d;
        let df = (d - 1) as f64;
        match &self.kind {
            DispersionKind::Identity => out.iter_mut().for_each(|o| *o = 0.0),
            DispersionKind::RadialProjection { c } => {
                if *c == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                let (r, u) = self.unit_radial(x)?;
                // ∇a = c(d-1) x/|x|²; c^i = β(d-1) x/(√2 |x|²) with β = √(1+c) - 1.
                let k = if strat {
                    ((1.0 + c).sqrt() - 1.0) * df / std::f64::consts::SQRT_2 * self.rescale
                } else {
                    c * df * self.rescale
                };
                for i in 0..d {
                    out[i] = k * u[i] / r;
                }
            }
            DispersionKind::SineLog { c, e } => {
                if *c == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return Ok(());
                }
                let (r, _) = self.unit_radial(x)?;
                let ex: f64 = e.iter().zip(x).map(|(a, b)| a * b).sum();
                let mut k = c * (2.0 * r.ln()).sin() * ex / (r * r) * self.rescale;
                if strat {
                    k /= 2.0 * std::f64::consts::SQRT_2;
                }
                for i in 0..d {
                    out[i] = k * e[i];
                }
            }
            DispersionKind::Sum { children } if !strat => {
                out.iter_mut().for_each(|o| *o = 0.0);
                let mut buf = [0.0; MAX_DIM];
                for ch in children {
                    ch.analytic_vector(x, &mut buf[..d], false)?;
                    out.iter_mut().zip(&buf[..d]).for_each(|(o, v)| *o += v * self.rescale);
                }
            }
            DispersionKind::Sum { children } if children.iter().filter(|c| !c.is_constant()).count() <= 1 => {
                // Constant children are the identity after normalization.
                match children.iter().find(|c| !c.is_constant()) {
                    Some(ch) => {
                        ch.analytic_vector(x, out, true)?;
                        out.iter_mut().for_each(|o| *o *= self.rescale);
                    }
                    None => out.iter_mut().for_each(|o| *o = 0.0),
                }
            }
            _ => {
                let what = if strat { "Stratonovich correction" } else { "divergence of a" };
                return Err(Error::UnsupportedAnalytic(format!("{what} of {}", self.kind_name())));
            }
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            DispersionKind::Identity => "identity",
            DispersionKind::RadialProjection { .. } => "radial_projection",
            DispersionKind::SineLog { .. } => "sine_log",
            DispersionKind::Sum { .. } => "sum",
            DispersionKind::GridSampled { .. } => "grid_sampled",
            DispersionKind::Mollified { .. } => "mollified",
        }
    }

    /// Whether `∇a` and the Stratonovich correction have closed forms.
    pub fn supports_analytic(&self) -> bool {
        match &self.kind {
            DispersionKind::Identity | DispersionKind::RadialProjection { .. } | DispersionKind::SineLog { .. } => true,
            DispersionKind::Sum { children } => children.iter().all(DispersionSpec::supports_analytic),
            _ => false,
        }
    }

    /// Whether the Stratonovich correction has a closed form: at most one
    /// non-constant analytic summand.
    pub fn supports_analytic_correction(&self) -> bool {
        match &self.kind {
            DispersionKind::Sum { children } => {
                children.iter().all(DispersionSpec::supports_analytic)
                    && children.iter().filter(|c| !c.is_constant()).count() <= 1
            }
            _ => self.supports_analytic(),
        }
    }

    /// Closed-form `sup_x ‖a(x) - I‖` (spectral norm) for the analytic kinds.
    pub fn a_dev_analytic(&self) -> Option<f64> {
        let rho = self.rescale;
        match &self.kind {
            DispersionKind::Identity => Some((rho - 1.0).abs()),
            DispersionKind::RadialProjection { c } | DispersionKind::SineLog { c, .. } => {
                Some((rho - 1.0).abs().max((rho * (1.0 + c) - 1.0).abs()))
            }
            DispersionKind::Sum { children } => {
                let s: Option<f64> = children.iter().map(|c| c.a_dev_analytic()).sum();
                s.map(|s| rho * s + (rho - 1.0))
            }
            _ => None,
        }
    }

    /// `max ‖a - I‖` over grid nodes (nodes at singular points are skipped).
    pub fn a_dev_on(&self, grid: &Grid) -> Result<f64> {
        let singular = self.singular_points();
        let mut a = [0.0; 9];
        let mut best = 0.0f64;
        for x in grid.nodes_iter() {
            if reject_singular(&x, &singular).is_err() {
                continue;
            }
            self.a_into(&x, &mut a)?;
            for i in 0..3 {
                a[i * 3 + i] -= 1.0;
            }
            let m = DMatrix::from_row_slice(3, 3, &a);
            let ev = SymmetricEigen::new(m).eigenvalues;
            best = best.max(ev.iter().fold(0.0f64, |acc, v| acc.max(v.abs())));
        }
        Ok(best)
    }

    /// `(‖σ‖_∞, [‖σ_{·ℓ}‖_∞])`, Frobenius and column sups, in closed form.
    pub fn sigma_sups_analytic(&self) -> Option<(f64, Vec<f64>)> {
        let d = self.d as f64;
        let rho = self.rescale;
        match &self.kind {
            DispersionKind::Identity => Some(((d * rho).sqrt(), vec![rho.sqrt(); self.d])),
            DispersionKind::RadialProjection { c } | DispersionKind::SineLog { c, .. } => {
                // σ = I + β uuᵀ: |σ|_F² = d - 1 + (1+β)² = d + c s, column² = 1 + c s u_ℓ².
                let cmax = c.max(0.0);
                let col = (rho * (1.0 + cmax)).sqrt();
                Some(((rho * (d + cmax)).sqrt(), vec![col; self.d]))
            }
            _ => None,
        }
    }

    /// Closed-form Hardy-type upper bounds `(δ_a, [γ_rℓ], [δ_rj])`.
    ///
    /// Radial projection: `|∇_r a_{·ℓ}| ≤ |c|/|x|` and `|∇_r σ_{·j}| ≤ |β|/|x|`,
    /// so Hardy's inequality gives `(2|c|/(d-2))²` and `(2|β|/(d-2))²`; `∇a` is
    /// itself a Hardy field with `κ = c(d-1)`. Sine-log: every derivative is
    /// bounded by `|c|/|x|` (and `|c|/(2|x|)` for `σ`, using `√(1+c s²) ≥ 1`).
    pub fn derivative_bounds_analytic(&self) -> Option<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.d;
        let dm2 = (d - 2) as f64;
        let rho = self.rescale;
        let hardy = |k: f64| (2.0 * k / dm2).powi(2);
        match &self.kind {
            DispersionKind::Identity => Some((0.0, vec![0.0; d * d], vec![0.0; d * d])),
            DispersionKind::RadialProjection { c } => {
                let beta = (1.0 + c).sqrt() - 1.0;
                Some((
                    hardy(c.abs() * (d - 1) as f64 * rho),
                    vec![hardy(c.abs() * rho); d * d],
                    vec![hardy(beta.abs() * rho.sqrt()); d * d],
                ))
            }
            DispersionKind::SineLog { c, e } => {
                // ∇_r a_{iℓ} = c sin(2 log r) x_r/r² e_i e_ℓ.
                let mut gam = vec![0.0; d * d];
                let mut dl = vec![0.0; d * d];
                for r in 0..d {
                    for l in 0..d {
                        gam[r * d + l] = hardy(c.abs() * e[l].abs() * rho);
                        dl[r * d + l] = hardy(c.abs() / (1.0 + c.min(0.0)).sqrt() * 0.5 * e[l].abs() * rho.sqrt());
                    }
                }
                Some((hardy(c.abs() * rho), gam, dl))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hardy_value_and_singularity() {
        let b = FieldSpec::hardy(3, 0.25, 1.0).unwrap();
        assert_eq!(b.eval(&[1.0, 0.0, 0.0]).unwrap(), vec![0.25, 0.0, 0.0]);
        assert!(matches!(b.eval(&[0.0, 0.0, 0.0]), Err(Error::SingularPoint { .. })));
        assert!(matches!(b.eval(&[1.0, 0.0]), Err(Error::DimensionMismatch { .. })));
        assert!(FieldSpec::hardy(2, 0.25, 1.0).is_err());
        assert!(FieldSpec::hardy(3, -0.1, 1.0).is_err());
    }

    #[test]
    fn sum_singular_set_is_union() {
        let s = FieldSpec::sum(vec![FieldSpec::hardy(3, 0.1, 1.0).unwrap(), FieldSpec::constant(&[1.0, 0.0, 0.0]).unwrap()])
            .unwrap();
        assert_eq!(s.singular_points(), vec![vec![0.0; 3]]);
        let v = s.eval(&[2.0, 0.0, 0.0]).unwrap();
        assert!((v[0] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn radial_projection_spectrum() {
        let a = DispersionSpec::radial_projection(3, 1.0).unwrap();
        let m = a.a(&[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(m, vec![2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = a.sigma(&[0.3, -0.4, 1.2]).unwrap();
        let mut g = [0.0; 9];
        gram_into(&s, 3, &mut g);
        let aa = a.a(&[0.3, -0.4, 1.2]).unwrap();
        for (p, q) in g.iter().zip(&aa) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn negative_c_is_rescaled_to_unit_floor() {
        let a = DispersionSpec::radial_projection(3, -0.5).unwrap();
        assert!((a.rescale - 2.0).abs() < 1e-15);
        let m = a.a(&[0.0, 1.0, 0.0]).unwrap();
        assert!((min_eigenvalue(&m, 3) - 1.0).abs() < 1e-12);
        assert!(DispersionSpec::radial_projection(3, -1.0).is_err());
        assert!(DispersionSpec::sine_log(3, 0.1, vec![1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn sum_dispersion_has_consistent_root() {
        let a = DispersionSpec::sum(vec![
            DispersionSpec::radial_projection(3, 0.3).unwrap(),
            DispersionSpec::sine_log(3, 0.2, vec![0.0, 0.0, 1.0]).unwrap(),
        ])
        .unwrap();
        let x = [0.7, 0.2, -1.1];
        let s = a.sigma(&x).unwrap();
        let mut g = [0.0; 9];
        gram_into(&s, 3, &mut g);
        let aa = a.a(&x).unwrap();
        for (p, q) in g.iter().zip(&aa) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn spec_json_round_trip() {
        let b = FieldSpec::sum(vec![
            FieldSpec::hardy(3, 0.25, -1.0).unwrap(),
            FieldSpec::bounded_box(3, 2.0, None, Some(1.0)).unwrap(),
        ])
        .unwrap();
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(serde_json::from_str::<FieldSpec>(&s).unwrap(), b);
        let a = DispersionSpec::sine_log(3, 0.1, vec![1.0, 0.0, 0.0]).unwrap();
        let s = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<DispersionSpec>(&s).unwrap(), a);
        let parsed: FieldSpec = serde_json::from_str(r#"{"d":3,"kind":"hardy","kappa":0.5}"#).unwrap();
        assert_eq!(parsed, FieldSpec::hardy(3, 0.5, 1.0).unwrap());
    }
}
