//! Tabulated coefficient data: multi-component grid samples with trilinear
//! lookup, and uniformly tabulated radial profiles with cubic lookup.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Node values of a `comps`-component field, node-major (`data[idx * comps + c]`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSamples {
    pub grid: Grid,
    pub comps: usize,
    pub data: Vec<f64>,
    /// Value returned outside the box, per component. `None` makes lookups
    /// outside the box an error.
    pub exterior: Option<Vec<f64>>,
}

impl GridSamples {
    pub fn new(grid: Grid, comps: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() * comps {
            return Err(Error::DimensionMismatch { expected: grid.len() * comps, got: data.len() });
        }
        Ok(Self { grid, comps, data, exterior: None })
    }

    pub fn with_exterior(mut self, value: Vec<f64>) -> Self {
        self.exterior = Some(value);
        self
    }

    pub fn at_node(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.comps..(idx + 1) * self.comps]
    }

    /// One component as a grid function.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.comps).copied().collect()
    }

    pub fn eval_into(&self, x: &[f64; 3], out: &mut [f64]) -> Result<()> {
        match self.grid.trilinear(x) {
            Ok(stencil) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (idx, w) in stencil {
                    for (o, v) in out.iter_mut().zip(self.at_node(idx)) {
                        *o += w * v;
                    }
                }
                Ok(())
            }
            Err(e) => match &self.exterior {
                Some(ext) => {
                    out.copy_from_slice(ext);
                    Ok(())
                }
                None => Err(e),
            },
        }
    }
}

/// Values on `r = 0, dr, 2dr, ...` evaluated with Catmull–Rom interpolation.
/// Beyond the last sample the profile is the constant `tail`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTable {
    pub dr: f64,
    pub values: Vec<f64>,
    pub tail: f64,
    /// Parity used to mirror the table for `r < 0` when fetching the left
    /// neighbour at `r = 0` (`-1.0` for profiles vanishing linearly at 0).
    pub parity: f64,
}

impl RadialTable {
    pub fn r_max(&self) -> f64 {
        self.dr * (self.values.len() - 1) as f64
    }

    fn sample(&self, i: isize) -> f64 {
        if i < 0 {
            self.parity * self.values[(-i) as usize]
        } else if (i as usize) < self.values.len() {
            self.values[i as usize]
        } else {
            self.tail
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.r_max() {
            return self.tail;
        }
        let s = r / self.dr;
        let i = s.floor() as isize;
        let t = s - i as f64;
        let (p0, p1, p2, p3) = (self.sample(i - 1), self.sample(i), self.sample(i + 1), self.sample(i + 2));
        let t2 = t * t;
        let t3 = t2 * t;
        0.5 * (2.0 * p1 + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
    }
}

/// Radial vector field `g(|x|) x/|x|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialVectorProfile {
    pub g: RadialTable,
}

impl RadialVectorProfile {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let s = self.g.eval(r) / r;
        for (o, v) in out.iter_mut().zip(x) {
            *o = s * v;
        }
    }

    pub fn sup(&self) -> f64 {
        self.g.values.iter().fold(self.g.tail.abs(), |m, v| m.max(v.abs()))
    }
}

/// Radial matrix field `A(|x|) I + B(|x|) x̂ x̂ᵀ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTensorProfile {
    pub iso: RadialTable,
    pub proj: RadialTable,
}

impl RadialTensorProfile {
    /// Returns `(A, B, x̂)` at `x`; `x̂ = 0` at the origin.
    pub fn parts(&self, x: &[f64]) -> (f64, f64, [f64; 3]) {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut u = [0.0; 3];
        if r > 0.0 {
            for (ui, xi) in u.iter_mut().zip(x) {
                *ui = xi / r;
            }
        }
        let b = if r > 0.0 { self.proj.eval(r) } else { 0.0 };
        (self.iso.eval(r), b, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catmull_rom_reproduces_cubics_inside() {
        let dr = 0.1;
        let f = |r: f64| 1.0 + r - 0.5 * r * r + 0.2 * r * r * r;
        let t = RadialTable { dr, values: (0..50).map(|i| f(i as f64 * dr)).collect(), tail: 0.0, parity: 1.0 };
        // Catmull-Rom is exact for quadratics and O(h^3) for cubics
        let r = 2.345;
        assert!((t.eval(r) - f(r)).abs() < 1e-3);
        let q = |r: f64| 2.0 - r + 0.3 * r * r;
        let tq = RadialTable { dr, values: (0..50).map(|i| q(i as f64 * dr)).collect(), tail: 0.0, parity: 1.0 };
        assert!((tq.eval(r) - q(r)).abs() < 1e-12);
        assert_eq!(t.eval(100.0), 0.0);
    }

    #[test]
    fn grid_samples_exterior_value() {
        let g = Grid::new(1.0, 4).unwrap();
        let s = GridSamples::new(g.clone(), 1, vec![2.0; g.len()]).unwrap();
        let mut out = [0.0];
        assert!(s.eval_into(&[2.0, 0.0, 0.0], &mut out).is_err());
        let s = s.with_exterior(vec![0.0]);
        s.eval_into(&[2.0, 0.0, 0.0], &mut out).unwrap();
        assert_eq!(out[0], 0.0);
        s.eval_into(&[0.1, 0.2, 0.3], &mut out).unwrap();
        assert!((out[0] - 2.0).abs() < 1e-14);
    }
}
