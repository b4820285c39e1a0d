use serde::{Deserialize, Serialize};

use super::{DispersionSpec, FieldKind, FieldSpec, SINGULAR_TOL};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::sampled::GridSamples;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    Analytic,
    FiniteDifference,
}

/// The vector field `(∇a)^k = Σ_i ∂_i a_ik`.
pub fn divergence_of_a(disp: &DispersionSpec, mode: DerivativeMode, grid: Option<&Grid>) -> Result<FieldSpec> {
    match mode {
        DerivativeMode::Analytic => {
            if !disp.supports_analytic() {
                return Err(Error::UnsupportedAnalytic(format!("divergence of a for {}", disp.kind_name())));
            }
            Ok(FieldSpec { d: disp.d, kind: FieldKind::Divergence { dispersion: Box::new(disp.clone()) } })
        }
        DerivativeMode::FiniteDifference => {
            let grid = grid.ok_or_else(|| Error::InvalidSpec("finite-difference mode needs a grid".into()))?;
            FieldSpec::grid_sampled(fd_divergence_samples(disp, grid)?)
        }
    }
}

/// `∂_r` of the matrix-valued map `eval` at `x`, central where possible and
/// one-sided second order where a neighbour falls outside sampled data.
fn matrix_derivative(
    eval: &dyn Fn(&[f64; 3], &mut [f64; 9]) -> Result<()>,
    x: &[f64; 3],
    r: usize,
    h: f64,
    out: &mut [f64; 9],
) -> Result<()> {
    let shifted = |s: f64| {
        let mut y = *x;
        y[r] += s * h;
        y
    };
    let (mut p, mut m) = ([0.0; 9], [0.0; 9]);
    let plus = eval(&shifted(1.0), &mut p);
    let minus = eval(&shifted(-1.0), &mut m);
    let one_sided = |dir: f64, out: &mut [f64; 9]| -> Result<()> {
        let (mut f0, mut f1, mut f2) = ([0.0; 9], [0.0; 9], [0.0; 9]);
        eval(x, &mut f0)?;
        eval(&shifted(dir), &mut f1)?;
        eval(&shifted(2.0 * dir), &mut f2)?;
        for k in 0..9 {
            out[k] = dir * (-3.0 * f0[k] + 4.0 * f1[k] - f2[k]) / (2.0 * h);
        }
        Ok(())
    };
    match (plus, minus) {
        (Ok(()), Ok(())) => {
            for k in 0..9 {
                out[k] = (p[k] - m[k]) / (2.0 * h);
            }
            Ok(())
        }
        (Ok(()), Err(Error::OutsideGrid(_))) => one_sided(1.0, out),
        (Err(Error::OutsideGrid(_)), Ok(())) => one_sided(-1.0, out),
        (Err(e), _) | (_, Err(e)) => Err(e),
    }
}

fn check_stencil(x: &[f64; 3], h: f64, singular: &[Vec<f64>]) -> Result<()> {
    for p in singular {
        for r in 0..3 {
            for s in [-1.0, 0.0, 1.0] {
                let mut y = *x;
                y[r] += s * h;
                let dist = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dist <= SINGULAR_TOL {
                    return Err(Error::SingularOnGrid { node: *x });
                }
            }
        }
    }
    Ok(())
}

/// Central-difference `∇a` at every node of `grid`.
pub fn fd_divergence_samples(disp: &DispersionSpec, grid: &Grid) -> Result<GridSamples> {
    if disp.d != 3 {
        return Err(Error::InvalidDimension(disp.d));
    }
    let h = grid.spacing();
    let singular = disp.singular_points();
    let eval = |y: &[f64; 3], out: &mut [f64; 9]| disp.a_into(y, out);
    let mut data = vec![0.0; grid.len() * 3];
    for (idx, chunk) in data.chunks_exact_mut(3).enumerate() {
        let x = grid.node(idx);
        check_stencil(&x, h, &singular)?;
        let mut da = [0.0; 9];
        for i in 0..3 {
            matrix_derivative(&eval, &x, i, h, &mut da)?;
            for k in 0..3 {
                chunk[k] += da[i * 3 + k];
            }
        }
    }
    Ok(GridSamples::new(grid.clone(), 3, data)?.with_exterior(vec![0.0; 3]))
}

/// Central-difference Stratonovich correction `c^i = (1/√2) Σ (∂_r σ_ij) σ_rj`.
pub fn fd_stratonovich_samples(disp: &DispersionSpec, grid: &Grid) -> Result<GridSamples> {
    if disp.d != 3 {
        return Err(Error::InvalidDimension(disp.d));
    }
    let h = grid.spacing();
    let singular = disp.singular_points();
    let eval = |y: &[f64; 3], out: &mut [f64; 9]| disp.sigma_into(y, out);
    let mut data = vec![0.0; grid.len() * 3];
    for (idx, chunk) in data.chunks_exact_mut(3).enumerate() {
        let x = grid.node(idx);
        check_stencil(&x, h, &singular)?;
        let mut s = [0.0; 9];
        eval(&x, &mut s)?;
        let mut ds = [0.0; 9];
        for r in 0..3 {
            matrix_derivative(&eval, &x, r, h, &mut ds)?;
            for i in 0..3 {
                for j in 0..3 {
                    chunk[i] += ds[i * 3 + j] * s[r * 3 + j];
                }
            }
        }
        chunk.iter_mut().for_each(|v| *v /= std::f64::consts::SQRT_2);
    }
    Ok(GridSamples::new(grid.clone(), 3, data)?.with_exterior(vec![0.0; 3]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_divergence_matches_closed_form() {
        let a = DispersionSpec::radial_projection(3, 0.1).unwrap();
        let f = divergence_of_a(&a, DerivativeMode::Analytic, None).unwrap();
        let x = [0.5, -1.0, 0.25];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let v = f.eval(&x).unwrap();
        for i in 0..3 {
            assert!((v[i] - 0.2 * x[i] / r2).abs() < 1e-15);
        }
    }

    #[test]
    fn sine_log_divergence_at_quarter_period() {
        let a = DispersionSpec::sine_log(3, 0.1, vec![1.0, 0.0, 0.0]).unwrap();
        let f = divergence_of_a(&a, DerivativeMode::Analytic, None).unwrap();
        let r = std::f64::consts::FRAC_PI_4.exp();
        let v = f.eval(&[r, 0.0, 0.0]).unwrap();
        assert!((v[0] - 0.1 * (-std::f64::consts::FRAC_PI_4).exp()).abs() < 1e-15);
        assert_eq!(v[1], 0.0);
    }

    #[test]
    fn finite_difference_needs_grid_and_rejects_grid_samples_analytically() {
        let a = DispersionSpec::identity(3);
        assert!(divergence_of_a(&a, DerivativeMode::FiniteDifference, None).is_err());
        let g = Grid::new(1.0, 4).unwrap();
        let s = GridSamples::new(g.clone(), 9, (0..g.len()).flat_map(|_| [1.0, 0., 0., 0., 1., 0., 0., 0., 1.]).collect())
            .unwrap();
        let gs = DispersionSpec::grid_sampled(s).unwrap();
        assert!(matches!(divergence_of_a(&gs, DerivativeMode::Analytic, None), Err(Error::UnsupportedAnalytic(_))));
    }
}
